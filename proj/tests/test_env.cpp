#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <queue>
#include <sstream>

#include "mtnav/env.hpp"

using namespace mtnav;

namespace {

/// Plan from rows ('#' obstacle, '.' free); row 0 is y = 0.
FloorPlan plan_from(const std::vector<std::string>& rows, std::vector<ObjectInstance> objects, int num_classes = 4) {
    FloorPlan p;
    p.id = "hand";
    p.height = static_cast<int>(rows.size());
    p.width = static_cast<int>(rows[0].size());
    p.num_classes = num_classes;
    for (const auto& r : rows)
        for (char ch : r) p.cells.push_back(ch == '#' ? 1 : 0);
    p.objects = std::move(objects);
    return p;
}

// Closed-square test for the segment between cell centres (0,0) and (dx,dy).
bool oracle_touches(int dx, int dy, int cx, int cy) {
    if (cx < std::min(0, dx) || cx > std::max(0, dx) || cy < std::min(0, dy) || cy > std::max(0, dy)) return false;
    const long cross = std::labs(static_cast<long>(cx) * dy - static_cast<long>(cy) * dx);
    return 2 * cross <= std::labs(dx) + std::labs(dy);
}

bool oracle_los(const FloorPlan& p, CellPos a, CellPos b) {
    const int dx = b.x - a.x, dy = b.y - a.y;
    for (int cx = -12; cx <= 12; ++cx)
        for (int cy = -12; cy <= 12; ++cy) {
            if ((cx == 0 && cy == 0) || (cx == dx && cy == dy)) continue;
            if (oracle_touches(dx, dy, cx, cy) && !p.is_free(a.x + cx, a.y + cy)) return false;
        }
    return true;
}

std::size_t flood_count(const FloorPlan& p) {
    std::vector<CellPos> stack;
    std::vector<char> seen(p.cells.size(), 0);
    for (int y = 0; y < p.height && stack.empty(); ++y)
        for (int x = 0; x < p.width && stack.empty(); ++x)
            if (p.is_free(x, y)) {
                stack.push_back({x, y});
                seen[p.index({x, y})] = 1;
            }
    std::size_t n = 0;
    while (!stack.empty()) {
        const CellPos c = stack.back();
        stack.pop_back();
        ++n;
        const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& d : nb) {
            const CellPos q{c.x + d[0], c.y + d[1]};
            if (p.is_free(q) && !seen[p.index(q)]) {
                seen[p.index(q)] = 1;
                stack.push_back(q);
            }
        }
    }
    return n;
}

// Dijkstra over unit-weight 4-connected free cells to an independently computed goal set.
std::optional<double> dijkstra_length(const FloorPlan& p, CellPos from, int cls) {
    std::vector<char> goal(p.cells.size(), 0);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) {
            if (!p.is_free(x, y)) continue;
            for (const auto& o : p.objects) {
                const double d = std::hypot(x - o.cell.x, y - o.cell.y) * 0.5;
                if (o.class_id == cls && d <= 1.5 + 1e-12 && oracle_los(p, {x, y}, o.cell)) goal[p.index({x, y})] = 1;
            }
        }
    std::vector<double> dist(p.cells.size(), 1e18);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[p.index(from)] = 0;
    pq.push({0.0, p.index(from)});
    while (!pq.empty()) {
        auto [d, i] = pq.top();
        pq.pop();
        if (d > dist[i]) continue;
        if (goal[i]) return d * 0.5;
        const int x = static_cast<int>(i) % p.width, y = static_cast<int>(i) / p.width;
        const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& n : nb) {
            const CellPos q{x + n[0], y + n[1]};
            if (!p.is_free(q)) continue;
            if (d + 1 < dist[p.index(q)]) {
                dist[p.index(q)] = d + 1;
                pq.push({d + 1, p.index(q)});
            }
        }
    }
    return std::nullopt;
}

/// Plan rotated by +90° (x, y) → (H−1−y, x).
FloorPlan rotate_plan(const FloorPlan& p) {
    FloorPlan r = p;
    r.width = p.height;
    r.height = p.width;
    r.cells.assign(p.cells.size(), 0);
    auto rot = [&](CellPos c) { return CellPos{p.height - 1 - c.y, c.x}; };
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) r.cells[r.index(rot({x, y}))] = p.cells[p.index({x, y})];
    for (auto& o : r.objects) o.cell = rot(o.cell);
    return r;
}

GenConfig small_gen(int classes = 6) {
    GenConfig g;
    g.num_classes = classes;
    return g;
}

}  // namespace

TEST(Generate, DeterministicForSeed) {
    const FloorPlan a = generate_floorplan(5, GenConfig{}), b = generate_floorplan(5, GenConfig{});
    EXPECT_EQ(a, b);
    EXPECT_NE(a.cells, generate_floorplan(6, GenConfig{}).cells);
}

TEST(Generate, ConnectedBoundedAndStocked) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const FloorPlan p = generate_floorplan(seed, GenConfig{});
        EXPECT_EQ(flood_count(p), p.free_cells().size()) << "seed " << seed;
        for (int x = 0; x < p.width; ++x) EXPECT_FALSE(p.is_free(x, 0) || p.is_free(x, p.height - 1));
        for (int y = 0; y < p.height; ++y) EXPECT_FALSE(p.is_free(0, y) || p.is_free(p.width - 1, y));
        std::vector<int> count(22, 0);
        for (const auto& o : p.objects) {
            ++count[static_cast<std::size_t>(o.class_id)];
            EXPECT_FALSE(p.is_free(o.cell));
            const bool faces_free = p.is_free(o.cell.x + 1, o.cell.y) || p.is_free(o.cell.x - 1, o.cell.y) ||
                                    p.is_free(o.cell.x, o.cell.y + 1) || p.is_free(o.cell.x, o.cell.y - 1);
            EXPECT_TRUE(faces_free);
        }
        for (int c : count) EXPECT_GE(c, 1);
    }
}

TEST(Generate, InfeasibleConfigIsGenerationError) {
    GenConfig g;
    g.width = g.height = 7;
    g.num_classes = 40;
    EXPECT_THROW(generate_floorplan(1, g), GenerationError);
    g.width = 5;
    EXPECT_THROW(generate_floorplan(1, g), ConfigError);
}

TEST(PlanFile, RoundTrip) {
    std::vector<FloorPlan> plans{generate_floorplan(1, small_gen()), generate_floorplan(2, small_gen())};
    plans[1].split = Split::test;
    std::stringstream ss;
    write_plans(ss, plans);
    EXPECT_EQ(read_plans(ss), plans);
    std::stringstream bad("MTNAV-PLANS 1\nplan x train 3 3 1 0\n###\n");
    EXPECT_ANY_THROW(read_plans(bad));
}

TEST(Reset, StartIsFreeAndDeterministic) {
    auto plan = std::make_shared<const FloorPlan>(generate_floorplan(3, small_gen()));
    NavEnv env;
    for (std::uint64_t s = 0; s < 20; ++s) {
        RngStream r1(s), r2(s);
        const auto a = env.reset(plan, 2, r1).first;
        const auto b = env.reset(plan, 2, r2).first;
        EXPECT_EQ(a, b);
        EXPECT_TRUE(plan->is_free(a.cell));
        EXPECT_EQ(a.pitch, 0);
    }
    RngStream r(0);
    EXPECT_THROW(env.reset(plan, 17, r), TaskError);
}

TEST(Reset, OptimalLengthMatchesDijkstra) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const FloorPlan p = generate_floorplan(100 + seed, small_gen());
        RngStream rng(seed);
        const auto frees = p.free_cells();
        const CellPos from = frees[rng.below(frees.size())];
        const int cls = static_cast<int>(rng.below(6));
        const auto got = shortest_path_length(p, from, cls);
        const auto ref = dijkstra_length(p, from, cls);
        ASSERT_EQ(got.has_value(), ref.has_value()) << "seed " << seed;
        if (got) {
            EXPECT_DOUBLE_EQ(*got, *ref);
        }
    }
}

TEST(ShortestPath, CorridorAndAdjacent) {
    // object at the east end of a 1-wide corridor; the goal region covers x = 8..10
    const FloorPlan p = plan_from({"############", "#..........#", "############"}, {{0, {11, 1}, HeightLevel::mid}}, 1);
    EXPECT_DOUBLE_EQ(*shortest_path_length(p, {2, 1}, 0), 3.0);  // goal region starts at x = 8
    EXPECT_DOUBLE_EQ(*shortest_path_length(p, {10, 1}, 0), 0.0);
    EXPECT_THROW((void)shortest_path_length(p, {1, 1}, 3), TaskError);
}

TEST(Step, RotationsAndLookClamp) {
    auto plan = std::make_shared<const FloorPlan>(generate_floorplan(3, small_gen()));
    EnvConfig cfg;
    NavEnv env(cfg);
    RngStream rng(1);
    const AgentState s0 = env.reset(plan, 0, rng).first;
    for (int i = 0; i < 4; ++i) env.step(Action::rotate_left);
    EXPECT_EQ(env.state(), s0);
    env.step(Action::look_up);
    auto [s, r] = env.step(Action::look_up);
    EXPECT_EQ(s.pitch, 1);
    EXPECT_FALSE(r.collided);
    env.step(Action::look_down);
    env.step(Action::look_down);
    auto [s2, r2] = env.step(Action::look_down);
    EXPECT_EQ(s2.pitch, -1);
    EXPECT_FALSE(r2.collided);
}

TEST(Step, WallCollisionKeepsPose) {
    const FloorPlan p = plan_from({"#####", "#...#", "#...#", "#...#", "#####"}, {{0, {0, 2}, HeightLevel::mid}}, 1);
    auto plan = std::make_shared<const FloorPlan>(p);
    NavEnv env;
    RngStream rng(3);
    env.reset(plan, 0, rng);
    for (int i = 0; i < 12; ++i) {
        const AgentState before = env.state();
        auto [after, r] = env.step(Action::move_ahead);
        if (r.collided) {
            EXPECT_EQ(after, before);
        } else {
            EXPECT_EQ(std::abs(after.cell.x - before.cell.x) + std::abs(after.cell.y - before.cell.y), 1);
        }
    }
    EXPECT_TRUE(env.step(Action::move_ahead).second.collided);  // pinned against a wall by now
}

TEST(Step, DoneSuccessDependsOnDistanceAndVisibility) {
    // object in the east wall at (6, 2); agent faces east (heading 0)
    const FloorPlan p = plan_from({"#######", "#.....#", "#.....#", "#.....#", "#######"}, {{0, {6, 2}, HeightLevel::mid}}, 1);
    auto plan = std::make_shared<const FloorPlan>(p);
    auto run_done_from = [&](CellPos start, int heading) {
        NavEnv env;
        // find a seed that lands on the wanted start pose
        for (std::uint64_t s = 0; s < 5000; ++s) {
            RngStream rng(s);
            const auto st = env.reset(plan, 0, rng).first;
            if (st.cell == start && st.heading == heading) return env.step(Action::done).second;
        }
        ADD_FAILURE() << "no seed gives the requested start";
        return StepResult{};
    };
    const auto near = run_done_from({4, 2}, 0);  // 1.0 m, object visible
    EXPECT_TRUE(near.done_valid);
    EXPECT_TRUE(near.episode_over);
    EXPECT_FALSE(run_done_from({2, 2}, 0).done_valid);  // 2.0 m
    EXPECT_FALSE(run_done_from({4, 2}, 2).done_valid);  // close but facing away
}

TEST(Step, ContractAfterEpisodeOverAndMaxSteps) {
    auto plan = std::make_shared<const FloorPlan>(generate_floorplan(3, small_gen()));
    EnvConfig cfg;
    cfg.max_steps = 5;
    NavEnv env(cfg);
    RngStream rng(2);
    env.reset(plan, 0, rng);
    for (int i = 0; i < 4; ++i) EXPECT_FALSE(env.step(Action::rotate_right).second.episode_over);
    EXPECT_TRUE(env.step(Action::rotate_right).second.episode_over);
    EXPECT_THROW(env.step(Action::move_ahead), ContractError);
}

TEST(Visibility, AheadBehindAndBlocked) {
    const FloorPlan p = plan_from({"#########", "#.......#", "#...#...#", "#.......#", "#########"},
                                  {{0, {5, 1}, HeightLevel::mid}, {1, {8, 2}, HeightLevel::mid}}, 2);
    AgentState s;
    s.cell = {4, 1};
    s.heading = 0;
    const auto d = visibility(s, p.objects[0], p);
    ASSERT_TRUE(d.has_value());
    EXPECT_DOUBLE_EQ((d->bbox[0] + d->bbox[2]) / 2, 0.5);
    EXPECT_LT(d->bbox[0], d->bbox[2]);
    EXPECT_LT(d->bbox[1], d->bbox[3]);
    s.heading = 2;
    EXPECT_FALSE(visibility(s, p.objects[0], p).has_value());
    // (8,2) from (2,2) looking east: the pillar at (4,2) blocks the ray
    s.cell = {2, 2};
    s.heading = 0;
    EXPECT_FALSE(visibility(s, p.objects[1], p).has_value());
    s.cell = {5, 2};
    EXPECT_TRUE(visibility(s, p.objects[1], p).has_value());
    s.pitch = 1;
    EXPECT_FALSE(visibility(s, p.objects[1], p).has_value());  // height mismatch
}

TEST(Visibility, SupercoverMatchesSegmentBoxOracle) {
    for (int dx = -7; dx <= 7; ++dx)
        for (int dy = -7; dy <= 7; ++dy) {
            std::set<std::pair<int, int>> got, want;
            grid::supercover_interior(dx, dy, [&](int x, int y) {
                got.insert({x, y});
                return true;
            });
            for (int cx = -8; cx <= 8; ++cx)
                for (int cy = -8; cy <= 8; ++cy)
                    if (!(cx == 0 && cy == 0) && !(cx == dx && cy == dy) && oracle_touches(dx, dy, cx, cy)) want.insert({cx, cy});
            EXPECT_EQ(got, want) << dx << "," << dy;
        }
}

TEST(Visibility, ExhaustiveAgainstIndependentRule) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const FloorPlan p = generate_floorplan(seed, small_gen());
        for (const auto& c : p.free_cells())
            for (int h = 0; h < 4; ++h)
                for (int pitch = -1; pitch <= 1; ++pitch) {
                    AgentState s{c, h, pitch};
                    for (const auto& o : p.objects) {
                        const int dx = o.cell.x - c.x, dy = o.cell.y - c.y;
                        const double fx[4] = {1, 0, -1, 0}, fy[4] = {0, 1, 0, -1};
                        const double fwd = dx * fx[h] + dy * fy[h];
                        const double left = -dx * fy[h] + dy * fx[h];
                        const double dist = std::hypot(dx, dy);
                        const bool want = fwd > 0 && dist <= 5.0 && std::abs(std::atan2(left, fwd)) <= M_PI / 4 + 1e-12 &&
                                          static_cast<int>(o.height) == pitch && oracle_los(p, c, o.cell);
                        EXPECT_EQ(visibility(s, o, p).has_value(), want);
                    }
                }
    }
}

TEST(Visibility, InvariantUnderGlobalRotation) {
    const FloorPlan p = generate_floorplan(21, small_gen());
    const FloorPlan r = rotate_plan(p);
    for (const auto& c : p.free_cells())
        for (int h = 0; h < 4; ++h) {
            const AgentState s{c, h, 0};
            const AgentState sr{{p.height - 1 - c.y, c.x}, (h + 1) % 4, 0};
            for (std::size_t k = 0; k < p.objects.size(); ++k) {
                const auto a = visibility(s, p.objects[k], p);
                const auto b = visibility(sr, r.objects[k], r);
                ASSERT_EQ(a.has_value(), b.has_value());
                if (a) {
                    EXPECT_EQ(a->bbox, b->bbox);
                    EXPECT_EQ(a->confidence, b->confidence);
                }
            }
        }
}

TEST(Visibility, TrainNoiseIsBounded) {
    const FloorPlan p = generate_floorplan(4, small_gen());
    RngStream noise(9);
    for (const auto& c : p.free_cells())
        for (int h = 0; h < 4; ++h)
            for (const auto& o : p.objects) {
                const AgentState s{c, h, static_cast<int>(o.height)};
                const auto clean = visibility(s, o, p);
                const auto noisy = visibility(s, o, p, {}, &noise);
                ASSERT_EQ(clean.has_value(), noisy.has_value());
                if (clean) {
                    EXPECT_LE(std::abs(clean->confidence - noisy->confidence), 0.05 + 1e-12);
                    EXPECT_GE(clean->confidence, 0.1);
                }
            }
}

TEST(Env, EvalModeIsDeterministicAndDoneImpliesDistance) {
    auto plan = std::make_shared<const FloorPlan>(generate_floorplan(8, small_gen()));
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::vector<Action> actions;
        RngStream pick(seed + 1000);
        for (int i = 0; i < 60; ++i) actions.push_back(static_cast<Action>(pick.below(6)));
        auto run = [&] {
            NavEnv env;
            RngStream rng(seed);
            env.reset(plan, static_cast<int>(seed % 6), rng);
            std::vector<std::pair<AgentState, std::vector<double>>> out;
            for (Action a : actions) {
                if (env.over()) break;
                auto [s, r] = env.step(a);
                if (r.done_valid) {
                    EXPECT_LE(env.nearest_target_m(), 1.5);
                }
                out.push_back({s, std::vector<double>(r.local_grid.data().begin(), r.local_grid.data().end())});
            }
            return out;
        };
        EXPECT_EQ(run(), run());
    }
}

TEST(Env, DetectableMaskFiltersClasses) {
    auto plan = std::make_shared<const FloorPlan>(generate_floorplan(8, small_gen()));
    NavEnv env;
    std::vector<bool> mask(6, true);
    mask[2] = false;
    env.set_detectable(mask);
    for (std::uint64_t s = 0; s < 200; ++s) {
        RngStream rng(s);
        auto [st, obs] = env.reset(plan, 0, rng);
        for (int k = 0; k < 5 && !env.over(); ++k) {
            for (const auto& d : obs.detections) EXPECT_NE(d.class_id, 2);
            obs = env.step(Action::rotate_left).second;
        }
    }
}

TEST(Env, LocalGridOccupancy) {
    const FloorPlan p = plan_from({"#####", "#...#", "#...#", "#...#", "#####"}, {{0, {0, 2}, HeightLevel::mid}}, 1);
    auto plan = std::make_shared<const FloorPlan>(p);
    NavEnv env;
    for (std::uint64_t s = 0; s < 200; ++s) {
        RngStream rng(s);
        auto [st, obs] = env.reset(plan, 0, rng);
        const Tensor& g = obs.local_grid;
        ASSERT_EQ(g.shape(), (Shape{8, 7, 7}));
        EXPECT_EQ(g[0 * 49 + 0 * 7 + 3], 0.0);  // own cell is free
        const CellPos ahead = grid::from_egocentric(st.cell, st.heading, 1, 0);
        EXPECT_EQ(g[1 * 7 + 3], p.is_free(ahead) ? 0.0 : 1.0);
        EXPECT_EQ(g[6 * 7 + 0], 1.0);  // far corner lies outside this 5×5 plan
    }
}
