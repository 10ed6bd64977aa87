#pragma once
// Discrete object-navigation world: procedurally generated floor plans,
// agent pose dynamics, synthetic detections and geodesic distances.
//
// Conventions: cell (x, y) has its centre at (0.5·x, 0.5·y) metres. Heading
// index h ∈ {0,1,2,3} means θ = 90°·h, with θ = 0 facing +x and θ = 90 facing
// +y (counter-clockwise). Pitch index p ∈ {−1,0,1} means β = 30°·p; negative
// pitch looks down. Objects sit on obstacle cells (furniture or walls) that
// border free space; the agent never enters an object cell.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtnav/errors.hpp"
#include "mtnav/nn.hpp"
#include "mtnav/rng.hpp"
#include "mtnav/tensor.hpp"

namespace mtnav {

inline constexpr double kCellMeters = 0.5;

enum class Action : int { move_ahead = 0, rotate_left, rotate_right, look_down, look_up, done };
inline constexpr std::size_t kNumActions = 6;

inline const char* action_name(Action a) {
    static constexpr std::array<const char*, kNumActions> names = {"MoveAhead", "RotateLeft", "RotateRight",
                                                                  "LookDown",  "LookUp",     "Done"};
    return names[static_cast<std::size_t>(a)];
}

enum class HeightLevel : int { low = -1, mid = 0, high = 1 };
enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw IoError("unknown split tag '" + s + "'");
}

struct CellPos {
    int x = 0;
    int y = 0;
    friend bool operator==(const CellPos&, const CellPos&) = default;
    friend auto operator<=>(const CellPos&, const CellPos&) = default;
};

struct ObjectInstance {
    int class_id = 0;
    CellPos cell;
    HeightLevel height = HeightLevel::mid;
    friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

struct FloorPlan {
    std::string id;
    Split split = Split::train;
    int width = 0;
    int height = 0;
    int num_classes = 0;
    std::vector<std::uint8_t> cells;  // row-major by y, 1 = obstacle
    std::vector<ObjectInstance> objects;

    bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    bool in_bounds(CellPos c) const { return in_bounds(c.x, c.y); }
    bool is_free(int x, int y) const { return in_bounds(x, y) && cells[static_cast<std::size_t>(y * width + x)] == 0; }
    bool is_free(CellPos c) const { return is_free(c.x, c.y); }
    std::size_t index(CellPos c) const { return static_cast<std::size_t>(c.y * width + c.x); }

    bool has_class(int class_id) const {
        return std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return o.class_id == class_id; });
    }

    std::vector<CellPos> free_cells() const {
        std::vector<CellPos> out;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (is_free(x, y)) out.push_back({x, y});
        return out;
    }

    friend bool operator==(const FloorPlan&, const FloorPlan&) = default;
};

/// Agent pose on the grid; metric accessors give (x, y, θ, β).
struct AgentState {
    CellPos cell;
    int heading = 0;  // 0..3
    int pitch = 0;    // -1..1

    double x() const { return kCellMeters * cell.x; }
    double y() const { return kCellMeters * cell.y; }
    double theta_deg() const { return 90.0 * heading; }
    double beta_deg() const { return 30.0 * pitch; }

    friend bool operator==(const AgentState&, const AgentState&) = default;
    friend auto operator<=>(const AgentState&, const AgentState&) = default;
};

struct Detection {
    int class_id = 0;
    CellPos cell;
    std::array<double, 4> bbox{};  // x1, y1, x2, y2 in [0, 1]
    double confidence = 0.0;
};

struct StepResult {
    std::vector<Detection> detections;
    Tensor local_grid;  // [C × 7 × 7]
    bool collided = false;
    bool done_valid = false;
    bool episode_over = false;

    bool detects(int class_id) const {
        return std::any_of(detections.begin(), detections.end(), [&](const auto& d) { return d.class_id == class_id; });
    }
};

// ---------------------------------------------------------------------------
// Geometry helpers

namespace grid {

inline constexpr std::array<int, 4> kDirX = {1, 0, -1, 0};
inline constexpr std::array<int, 4> kDirY = {0, 1, 0, -1};

/// Calls visit(cx, cy) for every cell strictly between (0,0) and (dx,dy) whose closed
/// square the straight segment touches (supercover). Stops early if visit returns false.
template <class Visit>
bool supercover_interior(int dx, int dy, Visit&& visit) {
    const int nx = std::abs(dx), ny = std::abs(dy);
    const int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
    int x = 0, y = 0, ix = 0, iy = 0;
    auto interior = [&](int cx, int cy) { return !(cx == dx && cy == dy) && !(cx == 0 && cy == 0); };
    while (ix < nx || iy < ny) {
        const long decision = static_cast<long>(1 + 2 * ix) * ny - static_cast<long>(1 + 2 * iy) * nx;
        if (decision == 0) {
            if (interior(x + sx, y) && !visit(x + sx, y)) return false;
            if (interior(x, y + sy) && !visit(x, y + sy)) return false;
            x += sx;
            y += sy;
            ++ix;
            ++iy;
        } else if (decision < 0) {
            x += sx;
            ++ix;
        } else {
            y += sy;
            ++iy;
        }
        if (interior(x, y) && !visit(x, y)) return false;
    }
    return true;
}

/// World cell reached from `origin` by `forward` cells along heading and `left` cells to its left.
inline CellPos from_egocentric(CellPos origin, int heading, int forward, int left) {
    const int fx = kDirX[static_cast<std::size_t>(heading)], fy = kDirY[static_cast<std::size_t>(heading)];
    const int lx = -fy, ly = fx;
    return {origin.x + forward * fx + left * lx, origin.y + forward * fy + left * ly};
}

/// (forward, left) integer offset of `target` in the agent frame.
inline std::pair<int, int> to_egocentric(CellPos origin, int heading, CellPos target) {
    const int dx = target.x - origin.x, dy = target.y - origin.y;
    const int fx = kDirX[static_cast<std::size_t>(heading)], fy = kDirY[static_cast<std::size_t>(heading)];
    return {dx * fx + dy * fy, -dx * fy + dy * fx};
}

/// True when every interior cell of the segment from `from` to `to` is free.
inline bool line_of_sight(const FloorPlan& plan, CellPos from, CellPos to) {
    return supercover_interior(to.x - from.x, to.y - from.y,
                               [&](int cx, int cy) { return plan.is_free(from.x + cx, from.y + cy); });
}

inline double cell_distance(CellPos a, CellPos b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

inline bool connected(const FloorPlan& plan) {
    const auto frees = plan.free_cells();
    if (frees.empty()) return false;
    std::vector<char> seen(plan.cells.size(), 0);
    std::deque<CellPos> queue{frees.front()};
    seen[plan.index(frees.front())] = 1;
    std::size_t reached = 1;
    while (!queue.empty()) {
        const CellPos c = queue.front();
        queue.pop_front();
        for (std::size_t d = 0; d < 4; ++d) {
            const CellPos n{c.x + kDirX[d], c.y + kDirY[d]};
            if (!plan.is_free(n) || seen[plan.index(n)]) continue;
            seen[plan.index(n)] = 1;
            ++reached;
            queue.push_back(n);
        }
    }
    return reached == frees.size();
}

}  // namespace grid

// ---------------------------------------------------------------------------
// Generation

struct GenConfig {
    int width = 11;
    int height = 11;
    double obstacle_density = 0.15;  // fraction of interior cells covered by furniture
    int num_classes = 22;
    int instances_per_class = 1;
    int extra_objects = 0;  // additional instances of random classes
};

inline void validate(const GenConfig& cfg) {
    if (cfg.width < 7 || cfg.height < 7) throw ConfigError("floor plan must be at least 7x7");
    if (cfg.num_classes < 1) throw ConfigError("num_classes must be positive");
    if (cfg.instances_per_class < 1) throw ConfigError("instances_per_class must be positive");
    if (cfg.extra_objects < 0) throw ConfigError("extra_objects must be non-negative");
    if (!(cfg.obstacle_density >= 0.0) || cfg.obstacle_density >= 0.6) {
        throw ConfigError("obstacle_density must lie in [0, 0.6)");
    }
}

/// Deterministic plan for a seed: walls on the border, rectangular furniture
/// blocks kept only while free space stays connected, then objects on
/// obstacle cells that face free space.
inline FloorPlan generate_floorplan(std::uint64_t seed, const GenConfig& cfg) {
    validate(cfg);
    RngStream rng(seed);
    FloorPlan plan;
    plan.id = "plan-" + std::to_string(seed);
    plan.width = cfg.width;
    plan.height = cfg.height;
    plan.num_classes = cfg.num_classes;
    plan.cells.assign(static_cast<std::size_t>(cfg.width * cfg.height), 0);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
            if (x == 0 || y == 0 || x == cfg.width - 1 || y == cfg.height - 1)
                plan.cells[static_cast<std::size_t>(y * cfg.width + x)] = 1;

    const int interior = (cfg.width - 2) * (cfg.height - 2);
    const int target_blocked = static_cast<int>(std::lround(cfg.obstacle_density * interior));
    int blocked = 0;
    for (int attempt = 0; attempt < 400 && blocked < target_blocked; ++attempt) {
        const int bw = 1 + static_cast<int>(rng.below(2));
        const int bh = 1 + static_cast<int>(rng.below(3));
        const bool transpose = rng.below(2) == 1;
        const int w = transpose ? bh : bw, h = transpose ? bw : bh;
        const int x0 = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.width - 1 - w)));
        const int y0 = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.height - 1 - h)));
        std::vector<std::size_t> placed;
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                const auto i = static_cast<std::size_t>(y * cfg.width + x);
                if (plan.cells[i] == 0) {
                    plan.cells[i] = 1;
                    placed.push_back(i);
                }
            }
        if (placed.empty()) continue;
        if (blocked + static_cast<int>(placed.size()) > target_blocked + 1 || !grid::connected(plan)) {
            for (auto i : placed) plan.cells[i] = 0;
            continue;
        }
        blocked += static_cast<int>(placed.size());
    }

    // Obstacle cells with a free 4-neighbour, excluding corners.
    std::vector<CellPos> anchors;
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            if (plan.is_free(x, y)) continue;
            for (std::size_t d = 0; d < 4; ++d) {
                if (plan.is_free(x + grid::kDirX[d], y + grid::kDirY[d])) {
                    anchors.push_back({x, y});
                    break;
                }
            }
        }
    const int wanted = cfg.num_classes * cfg.instances_per_class + cfg.extra_objects;
    if (wanted > static_cast<int>(anchors.size())) {
        throw GenerationError("plan " + plan.id + " has " + std::to_string(anchors.size()) +
                              " object anchors but needs " + std::to_string(wanted));
    }
    auto place = [&](int class_id) {
        const std::size_t k = rng.below(anchors.size());
        const auto height = static_cast<HeightLevel>(static_cast<int>(rng.below(3)) - 1);
        plan.objects.push_back({class_id, anchors[k], height});
        anchors.erase(anchors.begin() + static_cast<std::ptrdiff_t>(k));
    };
    for (int c = 0; c < cfg.num_classes; ++c)
        for (int i = 0; i < cfg.instances_per_class; ++i) place(c);
    for (int i = 0; i < cfg.extra_objects; ++i) place(static_cast<int>(rng.below(static_cast<std::size_t>(cfg.num_classes))));
    return plan;
}

// ---------------------------------------------------------------------------
// Plan files
//
//   MTNAV-PLANS 1
//   plan <id> <split> <width> <height> <num_classes> <num_objects>
//   <height rows of '#' (obstacle) / '.' (free), row y = 0 first>
//   obj <class_id> <x> <y> <low|mid|high>   (num_objects lines)
//   end

inline const char* height_name(HeightLevel h) {
    switch (h) {
        case HeightLevel::low: return "low";
        case HeightLevel::mid: return "mid";
        case HeightLevel::high: return "high";
    }
    return "mid";
}

inline void write_plans(std::ostream& os, const std::vector<FloorPlan>& plans) {
    os << "MTNAV-PLANS 1\n";
    for (const auto& p : plans) {
        os << "plan " << p.id << ' ' << split_name(p.split) << ' ' << p.width << ' ' << p.height << ' '
           << p.num_classes << ' ' << p.objects.size() << '\n';
        for (int y = 0; y < p.height; ++y) {
            for (int x = 0; x < p.width; ++x) os << (p.is_free(x, y) ? '.' : '#');
            os << '\n';
        }
        for (const auto& o : p.objects) {
            os << "obj " << o.class_id << ' ' << o.cell.x << ' ' << o.cell.y << ' ' << height_name(o.height) << '\n';
        }
        os << "end\n";
    }
}

inline std::vector<FloorPlan> read_plans(std::istream& is) {
    std::string header;
    int version = 0;
    if (!(is >> header >> version) || header != "MTNAV-PLANS") throw IoError("not a plan file");
    if (version != 1) throw IoError("unsupported plan file version " + std::to_string(version));
    std::vector<FloorPlan> plans;
    std::string tag;
    while (is >> tag) {
        if (tag != "plan") throw IoError("expected 'plan' record, got '" + tag + "'");
        FloorPlan p;
        std::string split;
        std::size_t n_objects = 0;
        if (!(is >> p.id >> split >> p.width >> p.height >> p.num_classes >> n_objects)) throw IoError("bad plan header");
        if (p.width < 1 || p.height < 1) throw IoError("bad plan size in " + p.id);
        p.split = parse_split(split);
        p.cells.assign(static_cast<std::size_t>(p.width * p.height), 0);
        for (int y = 0; y < p.height; ++y) {
            std::string row;
            if (!(is >> row) || static_cast<int>(row.size()) != p.width) throw IoError("bad grid row in " + p.id);
            for (int x = 0; x < p.width; ++x) {
                if (row[static_cast<std::size_t>(x)] != '.' && row[static_cast<std::size_t>(x)] != '#') {
                    throw IoError("bad grid character in " + p.id);
                }
                p.cells[static_cast<std::size_t>(y * p.width + x)] = row[static_cast<std::size_t>(x)] == '#' ? 1 : 0;
            }
        }
        for (std::size_t i = 0; i < n_objects; ++i) {
            std::string obj, h;
            ObjectInstance o;
            if (!(is >> obj >> o.class_id >> o.cell.x >> o.cell.y >> h) || obj != "obj") throw IoError("bad object in " + p.id);
            if (h == "low") o.height = HeightLevel::low;
            else if (h == "mid") o.height = HeightLevel::mid;
            else if (h == "high") o.height = HeightLevel::high;
            else throw IoError("bad object height '" + h + "' in " + p.id);
            p.objects.push_back(o);
        }
        if (!(is >> tag) || tag != "end") throw IoError("missing 'end' for " + p.id);
        plans.push_back(std::move(p));
    }
    return plans;
}

inline void save_plans(const std::filesystem::path& path, const std::vector<FloorPlan>& plans) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write plan file: " + path.string());
    write_plans(os, plans);
}

inline std::vector<FloorPlan> load_plans(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read plan file: " + path.string());
    return read_plans(is);
}

// ---------------------------------------------------------------------------
// Perception and distances

struct ViewConfig {
    int range_cells = 5;
    double half_fov_deg = 45.0;
    double success_distance_m = 1.5;
    int local_channels = 8;  // occupancy, distance, C−2 hashed class planes
};

namespace detail {
inline double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }
inline double object_height_m(HeightLevel h) {
    switch (h) {
        case HeightLevel::low: return 0.25;
        case HeightLevel::mid: return 0.9;
        case HeightLevel::high: return 1.55;
    }
    return 0.9;
}
inline constexpr double kCameraHeight = 0.9;
inline constexpr double kRadToDeg = 57.29577951308232;
}  // namespace detail

/// Synthetic detector. An object is detected iff it is within range, inside the
/// horizontal field of view, has unobstructed line of sight, and its height
/// level matches the camera pitch. `noise` (train mode) jitters confidence.
inline std::optional<Detection> visibility(const AgentState& state, const ObjectInstance& obj, const FloorPlan& plan,
                                           const ViewConfig& view = {}, RngStream* noise = nullptr) {
    const auto [fwd, left] = grid::to_egocentric(state.cell, state.heading, obj.cell);
    if (fwd <= 0) return std::nullopt;
    const double dist = std::sqrt(static_cast<double>(fwd * fwd + left * left));
    if (dist > view.range_cells) return std::nullopt;
    const double azimuth = std::atan2(static_cast<double>(-left), static_cast<double>(fwd)) * detail::kRadToDeg;
    if (std::abs(azimuth) > view.half_fov_deg) return std::nullopt;
    if (static_cast<int>(obj.height) != state.pitch) return std::nullopt;
    const bool clear = grid::supercover_interior(fwd, left, [&](int f, int l) {
        return plan.is_free(grid::from_egocentric(state.cell, state.heading, f, l));
    });
    if (!clear) return std::nullopt;

    constexpr double k = 0.5;
    const double size = detail::clamp(k / dist, 0.05, 0.6);
    const double cx = 0.5 + azimuth / 90.0;
    const double elevation =
        std::atan2(detail::object_height_m(obj.height) - detail::kCameraHeight, dist * kCellMeters) * detail::kRadToDeg;
    const double cy = detail::clamp(0.5 - (elevation - state.beta_deg()) / 90.0, 0.0, 1.0);
    Detection det;
    det.class_id = obj.class_id;
    det.cell = obj.cell;
    det.bbox = {std::max(0.0, cx - size / 2), std::max(0.0, cy - size / 2), std::min(1.0, cx + size / 2),
                std::min(1.0, cy + size / 2)};
    det.confidence = detail::clamp(1.0 - dist / view.range_cells, 0.1, 1.0);
    if (noise) det.confidence = detail::clamp(det.confidence + noise->uniform(-0.05, 0.05), 0.0, 1.0);
    return det;
}

/// Free cells from which the agent could succeed for `class_id`: within the
/// success distance of an instance and with line of sight to it.
inline std::vector<CellPos> goal_cells(const FloorPlan& plan, int class_id, double success_distance_m = 1.5) {
    std::vector<CellPos> out;
    for (const auto& c : plan.free_cells()) {
        for (const auto& o : plan.objects) {
            if (o.class_id != class_id) continue;
            if (grid::cell_distance(c, o.cell) * kCellMeters <= success_distance_m + 1e-12 &&
                grid::line_of_sight(plan, c, o.cell)) {
                out.push_back(c);
                break;
            }
        }
    }
    return out;
}

/// Multi-source BFS distance (in cells) from every free cell to the goal region; −1 if unreachable.
inline std::vector<int> geodesic_field(const FloorPlan& plan, int class_id, double success_distance_m = 1.5) {
    std::vector<int> dist(plan.cells.size(), -1);
    std::deque<CellPos> queue;
    for (const auto& g : goal_cells(plan, class_id, success_distance_m)) {
        dist[plan.index(g)] = 0;
        queue.push_back(g);
    }
    while (!queue.empty()) {
        const CellPos c = queue.front();
        queue.pop_front();
        for (std::size_t d = 0; d < 4; ++d) {
            const CellPos n{c.x + grid::kDirX[d], c.y + grid::kDirY[d]};
            if (!plan.is_free(n) || dist[plan.index(n)] >= 0) continue;
            dist[plan.index(n)] = dist[plan.index(c)] + 1;
            queue.push_back(n);
        }
    }
    return dist;
}

/// Shortest 4-connected path (metres) from `from` to any cell where the target
/// class could be declared found; nullopt when unreachable.
inline std::optional<double> shortest_path_length(const FloorPlan& plan, CellPos from, int class_id,
                                                  double success_distance_m = 1.5) {
    if (!plan.has_class(class_id)) throw TaskError("class " + std::to_string(class_id) + " not in plan " + plan.id);
    if (!plan.is_free(from)) return std::nullopt;
    const auto field = geodesic_field(plan, class_id, success_distance_m);
    const int d = field[plan.index(from)];
    if (d < 0) return std::nullopt;
    return d * kCellMeters;
}

// ---------------------------------------------------------------------------
// Environment

struct EnvConfig {
    int max_steps = 100;
    ViewConfig view;
    Mode mode = Mode::eval;  // train mode adds detection noise
};

/// One navigation episode at a time over an immutable, shared plan.
class NavEnv {
public:
    explicit NavEnv(EnvConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.view.local_channels < 3) throw ConfigError("local grid needs at least 3 channels");
        if (cfg_.max_steps < 1) throw ConfigError("max_steps must be positive");
    }

    const EnvConfig& config() const { return cfg_; }
    void set_mode(Mode m) { cfg_.mode = m; }

    /// Classes the detector may report; empty means all. Used for zero-shot masking.
    void set_detectable(std::vector<bool> mask) { detectable_ = std::move(mask); }

    /// Random free start cell and heading with level pitch; draws come from `rng`.
    std::pair<AgentState, StepResult> reset(std::shared_ptr<const FloorPlan> plan, int target, RngStream& rng) {
        if (!plan) throw ContractError("reset: null plan");
        if (!plan->has_class(target)) {
            throw TaskError("target class " + std::to_string(target) + " not present in plan " + plan->id);
        }
        plan_ = std::move(plan);
        target_ = target;
        field_ = geodesic_field(*plan_, target_, cfg_.view.success_distance_m);
        const auto frees = plan_->free_cells();
        state_.cell = frees[rng.below(frees.size())];
        state_.heading = static_cast<int>(rng.below(4));
        state_.pitch = 0;
        noise_ = rng.fork(0x6e6f697365ULL);
        steps_ = 0;
        over_ = false;
        StepResult obs = observe();
        last_detected_ = obs.detects(target_);
        return {state_, std::move(obs)};
    }

    std::pair<AgentState, StepResult> step(Action action) {
        if (!plan_) throw ContractError("step: reset() has not been called");
        if (over_) throw ContractError("step: episode is already over");
        bool collided = false;
        bool done_valid = false;
        switch (action) {
            case Action::move_ahead: {
                const CellPos next = grid::from_egocentric(state_.cell, state_.heading, 1, 0);
                if (plan_->is_free(next)) state_.cell = next;
                else collided = true;
                break;
            }
            case Action::rotate_left: state_.heading = (state_.heading + 1) % 4; break;
            case Action::rotate_right: state_.heading = (state_.heading + 3) % 4; break;
            case Action::look_down: state_.pitch = std::max(-1, state_.pitch - 1); break;
            case Action::look_up: state_.pitch = std::min(1, state_.pitch + 1); break;
            case Action::done:
                done_valid = last_detected_ && nearest_target_m() <= cfg_.view.success_distance_m + 1e-12;
                over_ = true;
                break;
        }
        ++steps_;
        if (steps_ >= cfg_.max_steps) over_ = true;
        StepResult obs = observe();
        obs.collided = collided;
        obs.done_valid = done_valid;
        obs.episode_over = over_;
        last_detected_ = obs.detects(target_);
        return {state_, std::move(obs)};
    }

    const AgentState& state() const { return state_; }
    int target() const { return target_; }
    int steps() const { return steps_; }
    bool over() const { return over_; }
    const FloorPlan& plan() const { return *plan_; }
    std::shared_ptr<const FloorPlan> plan_ptr() const { return plan_; }

    /// Geodesic cells from the current cell to the success region (−1 if unreachable).
    int geodesic_cells() const { return field_[plan_->index(state_.cell)]; }
    int geodesic_cells(CellPos c) const { return field_[plan_->index(c)]; }

    double nearest_target_m() const {
        double best = 1e300;
        for (const auto& o : plan_->objects) {
            if (o.class_id == target_) best = std::min(best, grid::cell_distance(state_.cell, o.cell) * kCellMeters);
        }
        return best;
    }

    StepResult observe() {
        StepResult r;
        RngStream* noise = cfg_.mode == Mode::train ? &noise_ : nullptr;
        for (const auto& o : plan_->objects) {
            if (!detectable_.empty() && !detectable_.at(static_cast<std::size_t>(o.class_id))) continue;
            if (auto d = visibility(state_, o, *plan_, cfg_.view, noise)) r.detections.push_back(*d);
        }
        r.local_grid = local_grid(r.detections);
        r.episode_over = over_;
        return r;
    }

    /// Egocentric 7×7 window: row = cells ahead (0..6), column = lateral offset (−3..3, left first).
    /// Channel 0 occupancy (outside the map counts as occupied), channel 1 distance/range for
    /// cells in view with line of sight, channels 2.. one plane per class hash for detected objects.
    Tensor local_grid(const std::vector<Detection>& detections) const {
        const int channels = cfg_.view.local_channels;
        constexpr int kSide = 7;
        std::vector<double> g(static_cast<std::size_t>(channels * kSide * kSide), 0.0);
        auto at = [&](int ch, int row, int col) -> double& {
            return g[static_cast<std::size_t>((ch * kSide + row) * kSide + col)];
        };
        for (int f = 0; f < kSide; ++f) {
            for (int l = -3; l <= 3; ++l) {
                const int col = 3 - l;
                const CellPos c = grid::from_egocentric(state_.cell, state_.heading, f, l);
                at(0, f, col) = plan_->is_free(c) ? 0.0 : 1.0;
                if (f == 0) continue;
                const double dist = std::sqrt(static_cast<double>(f * f + l * l));
                const double az = std::atan2(static_cast<double>(-l), static_cast<double>(f)) * detail::kRadToDeg;
                if (dist > cfg_.view.range_cells || std::abs(az) > cfg_.view.half_fov_deg) continue;
                const bool clear = grid::supercover_interior(f, l, [&](int ff, int ll) {
                    return plan_->is_free(grid::from_egocentric(state_.cell, state_.heading, ff, ll));
                });
                if (clear) at(1, f, col) = dist / cfg_.view.range_cells;
            }
        }
        for (const auto& d : detections) {
            const auto [f, l] = grid::to_egocentric(state_.cell, state_.heading, d.cell);
            if (f < 0 || f >= kSide || l < -3 || l > 3) continue;
            at(2 + d.class_id % (channels - 2), f, 3 - l) = 1.0;
        }
        return Tensor(Shape{static_cast<std::size_t>(channels), kSide, kSide}, std::move(g));
    }

private:
    EnvConfig cfg_;
    std::shared_ptr<const FloorPlan> plan_;
    std::vector<bool> detectable_;
    std::vector<int> field_;
    AgentState state_;
    RngStream noise_;
    int target_ = 0;
    int steps_ = 0;
    bool over_ = false;
    bool last_detected_ = false;
};

}  // namespace mtnav
