#include <gtest/gtest.h>

#include <cmath>

#include "mtnav/memory.hpp"

using namespace mtnav;

namespace {

AgentState pose(int x, int y, int heading, int pitch = 0) { return AgentState{{x, y}, heading, pitch}; }

StepResult with_detections(std::vector<Detection> dets, bool collided = false) {
    StepResult r;
    r.detections = std::move(dets);
    r.collided = collided;
    r.local_grid = Tensor::zeros({8, 7, 7});
    return r;
}

}  // namespace

TEST(Egocentric, CurrentPoseIsCanonicalRow) {
    for (int h = 0; h < 4; ++h)
        for (int p = -1; p <= 1; ++p) {
            const AgentState s = pose(3, 4, h, p);
            const auto rows = egocentric_rows({PoseRow::of(s)}, s);
            const std::array<double, 6> want{0, 0, 0, 1, 0, 1};
            EXPECT_EQ(rows[0], want);
        }
}

TEST(Egocentric, AheadAndLeftAxes) {
    // agent facing +y: a point one cell further along +y is ahead, one cell at −x is to its left
    const AgentState s = pose(2, 2, 1);
    const auto rows = egocentric_rows({{1.0, 1.5, 90, 0}, {0.5, 1.0, 90, 0}}, s);
    EXPECT_NEAR(rows[0][0], 0.5, 1e-12);
    EXPECT_NEAR(rows[0][1], 0.0, 1e-12);
    EXPECT_NEAR(rows[1][0], 0.0, 1e-12);
    EXPECT_NEAR(rows[1][1], 0.5, 1e-12);
}

TEST(Egocentric, InvariantUnderGlobalRotation) {
    // rotating the whole world by 90° about the origin (x, y) → (−y, x), heading + 1
    RngStream rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const AgentState cur = pose(static_cast<int>(rng.below(9)), static_cast<int>(rng.below(9)),
                                    static_cast<int>(rng.below(4)), static_cast<int>(rng.below(3)) - 1);
        std::vector<PoseRow> rows, rotated;
        for (int k = 0; k < 6; ++k) {
            const AgentState s = pose(static_cast<int>(rng.below(9)), static_cast<int>(rng.below(9)),
                                      static_cast<int>(rng.below(4)), static_cast<int>(rng.below(3)) - 1);
            rows.push_back(PoseRow::of(s));
            rotated.push_back(PoseRow::of(pose(-s.cell.y, s.cell.x, (s.heading + 1) % 4, s.pitch)));
        }
        const AgentState cur_rot = pose(-cur.cell.y, cur.cell.x, (cur.heading + 1) % 4, cur.pitch);
        const auto a = egocentric_rows(rows, cur), b = egocentric_rows(rotated, cur_rot);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(a[i][j], b[i][j], 1e-12);
    }
}

TEST(Egocentric, AngleFeaturesAreUnitCircle) {
    RngStream rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const AgentState cur = pose(0, 0, static_cast<int>(rng.below(4)), static_cast<int>(rng.below(3)) - 1);
        const PoseRow r{rng.uniform(-3, 3), rng.uniform(-3, 3), 90.0 * static_cast<double>(rng.below(4)),
                        30.0 * (static_cast<double>(rng.below(3)) - 1.0)};
        const auto row = egocentric_rows({r}, cur)[0];
        for (std::size_t j = 2; j < 6; ++j) {
            EXPECT_GE(row[j], -1.0);
            EXPECT_LE(row[j], 1.0);
        }
        EXPECT_NEAR(row[2] * row[2] + row[3] * row[3], 1.0, 1e-12);
        EXPECT_NEAR(row[4] * row[4] + row[5] * row[5], 1.0, 1e-12);
    }
}

TEST(Egocentric, SinCosDegreesExactAtMultiplesOf30) {
    for (int k = -24; k <= 24; ++k) {
        const double deg = 30.0 * k;
        EXPECT_NEAR(sin_deg(deg), std::sin(deg * M_PI / 180.0), 1e-15);
        EXPECT_NEAR(cos_deg(deg), std::cos(deg * M_PI / 180.0), 1e-15);
    }
    EXPECT_EQ(sin_deg(180.0), 0.0);
    EXPECT_EQ(cos_deg(90.0), 0.0);
}

TEST(Polarize, MatchesHypotAndAtan2) {
    const Tensor rows = Tensor::matrix(3, 3, {3, 4, 7, 0, 0, 1, -1, 0, 2});
    const Tensor p = polarize(rows);
    ASSERT_EQ(p.shape(), (Shape{3, 4}));
    EXPECT_DOUBLE_EQ(p[0], 5.0);
    EXPECT_DOUBLE_EQ(p[1], std::sin(std::atan2(4.0, 3.0)));
    EXPECT_DOUBLE_EQ(p[2], std::cos(std::atan2(4.0, 3.0)));
    EXPECT_DOUBLE_EQ(p[3], 7.0);
    EXPECT_EQ(p[4], 0.0);
    EXPECT_EQ(p[5], 0.0);
    EXPECT_EQ(p[6], 1.0);
    EXPECT_DOUBLE_EQ(p[9], 0.0);
    EXPECT_DOUBLE_EQ(p[10], -1.0);
    EXPECT_THROW(polarize(Tensor::row({1.0})), DimensionError);
}

TEST(Memory, HistoryGrowsEveryStepWithFifoCap) {
    EpisodeMemory mem;
    mem.caps.exploration = 3;
    for (int i = 0; i < 5; ++i) update_memories(with_detections({}), pose(i, 0, 0), 0, mem);
    ASSERT_EQ(mem.history.size(), 3u);
    EXPECT_DOUBLE_EQ(mem.history.front().x, 1.0);
    EXPECT_DOUBLE_EQ(mem.history.back().x, 2.0);
}

TEST(Memory, TomgOnlyOnTargetDetectionAndKeepsBest) {
    EpisodeMemory mem;
    mem.caps.navigation = 2;
    Detection other{1, {5, 5}, {0.1, 0.2, 0.3, 0.4}, 0.9};
    update_memories(with_detections({other}), pose(1, 1, 0), 0, mem);
    EXPECT_TRUE(mem.tomg.empty());
    Detection weak{0, {5, 5}, {0.1, 0.1, 0.2, 0.2}, 0.3}, strong{0, {6, 5}, {0.4, 0.1, 0.6, 0.3}, 0.8};
    update_memories(with_detections({weak, other, strong}), pose(1, 1, 0), 0, mem);
    ASSERT_EQ(mem.tomg.size(), 1u);
    EXPECT_EQ(mem.tomg[0].confidence, 0.8);
    EXPECT_EQ(mem.tomg[0].bbox, strong.bbox);
    update_memories(with_detections({weak}), pose(2, 1, 0), 0, mem);
    update_memories(with_detections({weak}), pose(3, 1, 0), 0, mem);
    ASSERT_EQ(mem.tomg.size(), 2u);
    EXPECT_DOUBLE_EQ(mem.tomg.front().pose.x, 1.0);

    const auto t = tomg_tensor(mem.tomg);
    ASSERT_TRUE(t.has_value());
    EXPECT_EQ(t->shape(), (Shape{2, 9}));
    EXPECT_FALSE(tomg_tensor({}).has_value());
}

TEST(Memory, ObstacleCellRecordedOnceOnCollision) {
    EpisodeMemory mem;
    update_memories(with_detections({}, true), pose(2, 2, 1), 0, mem);
    update_memories(with_detections({}, true), pose(2, 2, 1), 0, mem);
    update_memories(with_detections({}, false), pose(2, 2, 0), 0, mem);
    ASSERT_EQ(mem.obstacles.size(), 1u);
    EXPECT_DOUBLE_EQ(mem.obstacles[0][0], 1.0);
    EXPECT_DOUBLE_EQ(mem.obstacles[0][1], 1.5);
    update_memories(with_detections({}, true), pose(2, 2, 2), 0, mem);
    EXPECT_EQ(mem.obstacles.size(), 2u);
}

TEST(Inputs, SearchRowsAndShapes) {
    const AppearanceTable app = AppearanceTable::seeded(4, 3, 11);
    EpisodeMemory mem;
    Detection a{2, {1, 1}, {0.1, 0.2, 0.3, 0.4}, 0.7}, b{2, {1, 2}, {0.5, 0.2, 0.6, 0.4}, 0.4}, c{0, {3, 1}, {0, 0, 1, 1}, 0.2};
    const StepResult obs = with_detections({a, b, c});
    const AgentState s = pose(1, 1, 0);
    update_memories(obs, s, 2, mem);
    const ThinkingInputs in = build_inputs(obs, s, 2, mem, app);
    ASSERT_EQ(in.search.shape(), (Shape{4, 9}));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(in.search[2 * 9 + j], app.rows[2][j]);
    EXPECT_EQ(in.search[2 * 9 + 3], 0.1);
    EXPECT_EQ(in.search[2 * 9 + 7], 0.7);
    EXPECT_EQ(in.search[2 * 9 + 8], 1.0);
    EXPECT_EQ(in.search[0 * 9 + 8], 0.0);
    EXPECT_EQ(in.search[0 * 9 + 7], 0.2);
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(in.search[1 * 9 + j], 0.0);
    ASSERT_TRUE(in.navigation.has_value());
    EXPECT_EQ(in.exploration.size(), 1u);
    EXPECT_TRUE(in.obstacle.empty());

    Detection bad{7, {1, 1}, {0, 0, 1, 1}, 0.5};
    EXPECT_THROW(build_inputs(with_detections({bad}), s, 2, mem, app), DimensionError);
}

TEST(Inputs, AppearanceTableIsSeeded) {
    const auto a = AppearanceTable::seeded(5, 4, 3), b = AppearanceTable::seeded(5, 4, 3);
    EXPECT_EQ(a.rows, b.rows);
    EXPECT_NE(a.rows, AppearanceTable::seeded(5, 4, 4).rows);
    for (const auto& r : a.rows)
        for (double v : r) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Inputs, EgocentricTomgKeepsBoxAndConfidence) {
    std::deque<TomgNode> nodes{{{0.1, 0.2, 0.3, 0.4}, {1.0, 1.0, 0.0, 0.0}, 0.6}};
    const Tensor ego = egocentric_tomg(*tomg_tensor(nodes), pose(2, 2, 0));
    ASSERT_EQ(ego.shape(), (Shape{1, 11}));
    EXPECT_EQ(ego[0], 0.1);
    EXPECT_EQ(ego[3], 0.4);
    EXPECT_EQ(ego[4], 0.0);
    EXPECT_EQ(ego[7], 1.0);
    EXPECT_EQ(ego[10], 0.6);
    EXPECT_THROW(egocentric_tomg(Tensor::zeros({1, 8}), pose(0, 0, 0)), DimensionError);
}
