#pragma once
// Per-episode memories and the five thinking inputs built from them.

#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "mtnav/env.hpp"
#include "mtnav/errors.hpp"
#include "mtnav/rng.hpp"
#include "mtnav/tensor.hpp"

namespace mtnav {

/// World-frame pose row (metres, degrees).
struct PoseRow {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
    double beta = 0.0;

    static PoseRow of(const AgentState& s) { return {s.x(), s.y(), s.theta_deg(), s.beta_deg()}; }
    friend bool operator==(const PoseRow&, const PoseRow&) = default;
};

/// Target-oriented memory node: target box, agent pose and detector confidence (9 scalars).
struct TomgNode {
    std::array<double, 4> bbox{};
    PoseRow pose;
    double confidence = 0.0;
};

struct MemoryCaps {
    std::size_t navigation = 40;
    std::size_t exploration = 200;
    std::size_t obstacle = 50;
};

struct EpisodeMemory {
    MemoryCaps caps;
    std::deque<TomgNode> tomg;
    std::deque<PoseRow> history;
    std::deque<std::array<double, 2>> obstacles;

    void clear() {
        tomg.clear();
        history.clear();
        obstacles.clear();
    }
};

/// Appends this step's evidence. History grows every call; the TOMG only when the
/// target is detected; the obstacle list gains the blocked cell ahead when the
/// step collided (deduplicated). Each list evicts its oldest entry past its cap.
inline void update_memories(const StepResult& obs, const AgentState& state, int target, EpisodeMemory& mem) {
    mem.history.push_back(PoseRow::of(state));
    if (mem.history.size() > mem.caps.exploration) mem.history.pop_front();

    const Detection* best = nullptr;
    for (const auto& d : obs.detections) {
        if (d.class_id == target && (!best || d.confidence > best->confidence)) best = &d;
    }
    if (best) {
        mem.tomg.push_back({best->bbox, PoseRow::of(state), best->confidence});
        if (mem.tomg.size() > mem.caps.navigation) mem.tomg.pop_front();
    }

    if (obs.collided) {
        const CellPos blocked = grid::from_egocentric(state.cell, state.heading, 1, 0);
        const std::array<double, 2> pos{blocked.x * kCellMeters, blocked.y * kCellMeters};
        if (std::find(mem.obstacles.begin(), mem.obstacles.end(), pos) == mem.obstacles.end()) {
            mem.obstacles.push_back(pos);
            if (mem.obstacles.size() > mem.caps.obstacle) mem.obstacles.pop_front();
        }
    }
}

// ---------------------------------------------------------------------------
// Coordinate transforms

/// sin/cos in degrees, exact for multiples of 30°.
inline double sin_deg(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r < 0) r += 360.0;
    const double k = r / 30.0;
    if (k == std::floor(k)) {
        static constexpr std::array<double, 12> table = {0.0, 0.5, 0.86602540378443865, 1.0, 0.86602540378443865, 0.5,
                                                         0.0, -0.5, -0.86602540378443865, -1.0, -0.86602540378443865, -0.5};
        return table[static_cast<std::size_t>(k)];
    }
    return std::sin(r * 3.14159265358979323846 / 180.0);
}
inline double cos_deg(double deg) { return sin_deg(deg + 90.0); }

/// Egocentric rows (x̃, ỹ, sin Δθ, cos Δθ, sin Δβ, cos Δβ) relative to `current`.
/// Positions are translated then rotated into the agent frame (+x̃ ahead, +ỹ to the left).
inline std::vector<std::array<double, 6>> egocentric_rows(const std::vector<PoseRow>& rows, const AgentState& current) {
    const double c = cos_deg(current.theta_deg()), s = sin_deg(current.theta_deg());
    std::vector<std::array<double, 6>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        const double dx = r.x - current.x(), dy = r.y - current.y();
        const double dtheta = r.theta - current.theta_deg(), dbeta = r.beta - current.beta_deg();
        out.push_back({dx * c + dy * s, -dx * s + dy * c, sin_deg(dtheta), cos_deg(dtheta), sin_deg(dbeta),
                       cos_deg(dbeta)});
    }
    return out;
}

/// Tensor[D×6] form of egocentric_rows; rows must be non-empty.
inline Tensor egocentric_transform(const std::vector<PoseRow>& rows, const AgentState& current) {
    if (rows.empty()) throw ContractError("egocentric_transform: no rows");
    std::vector<double> flat;
    flat.reserve(rows.size() * 6);
    for (const auto& r : egocentric_rows(rows, current)) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor(Shape{rows.size(), 6}, std::move(flat));
}

/// Rotated positions only (obstacle rows): Tensor[D×2].
inline Tensor egocentric_positions(const std::vector<std::array<double, 2>>& rows, const AgentState& current) {
    if (rows.empty()) throw ContractError("egocentric_positions: no rows");
    const double c = cos_deg(current.theta_deg()), s = sin_deg(current.theta_deg());
    std::vector<double> flat;
    flat.reserve(rows.size() * 2);
    for (const auto& r : rows) {
        const double dx = r[0] - current.x(), dy = r[1] - current.y();
        flat.push_back(dx * c + dy * s);
        flat.push_back(-dx * s + dy * c);
    }
    return Tensor(Shape{rows.size(), 2}, std::move(flat));
}

/// Replaces the leading (x̃, ỹ) columns by (ρ, sin φ, cos φ); other columns pass through.
/// ρ = 0 maps to (0, 0, 1).
inline Tensor polarize(const Tensor& rows) {
    if (rows.rank() != 2 || rows.dim(1) < 2) throw DimensionError("polarize: need [D×k], k ≥ 2, got " + shape_str(rows.shape()));
    const std::size_t d = rows.dim(0), k = rows.dim(1);
    std::vector<double> out(d * (k + 1));
    for (std::size_t i = 0; i < d; ++i) {
        const double x = rows[i * k], y = rows[i * k + 1];
        const double rho = std::sqrt(x * x + y * y);
        double* o = out.data() + i * (k + 1);
        o[0] = rho;
        o[1] = rho == 0.0 ? 0.0 : y / rho;
        o[2] = rho == 0.0 ? 1.0 : x / rho;
        for (std::size_t j = 2; j < k; ++j) o[j + 1] = rows[i * k + j];
    }
    return Tensor(Shape{d, k + 1}, std::move(out));
}

// ---------------------------------------------------------------------------
// Thinking inputs

/// Fixed per-class appearance vectors standing in for detector features.
struct AppearanceTable {
    std::size_t dim = 16;
    std::vector<std::vector<double>> rows;

    static AppearanceTable seeded(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
        AppearanceTable t;
        t.dim = dim;
        RngStream base(seed);
        for (std::size_t c = 0; c < num_classes; ++c) {
            RngStream r = base.fork(c);
            std::vector<double> v(dim);
            for (double& x : v) x = r.uniform(-1.0, 1.0);
            t.rows.push_back(std::move(v));
        }
        return t;
    }
};

struct ThinkingInputs {
    Tensor intuition;                  // [C×7×7]
    Tensor search;                     // [N × (d_app + 6)]
    std::optional<Tensor> navigation;  // [D_n × 9]; absent when D_n = 0
    std::vector<PoseRow> exploration;  // D_e world-frame rows, egocentrized by the encoder
    std::vector<std::array<double, 2>> obstacle;
    AgentState pose;
};

/// Tensor[D_n×9] with columns (bbox[4], x, y, θ, β, confidence).
inline std::optional<Tensor> tomg_tensor(const std::deque<TomgNode>& tomg) {
    if (tomg.empty()) return std::nullopt;
    std::vector<double> flat;
    flat.reserve(tomg.size() * 9);
    for (const auto& n : tomg) {
        flat.insert(flat.end(), n.bbox.begin(), n.bbox.end());
        flat.insert(flat.end(), {n.pose.x, n.pose.y, n.pose.theta, n.pose.beta, n.confidence});
    }
    return Tensor(Shape{tomg.size(), 9}, std::move(flat));
}

/// Builds the five thinking inputs from the current observation and the already
/// updated memories. Search rows hold (appearance, bbox, confidence, is_target)
/// for the most confident detection of each class, zero for undetected classes.
inline ThinkingInputs build_inputs(const StepResult& obs, const AgentState& state, int target, const EpisodeMemory& mem,
                                   const AppearanceTable& appearance) {
    const std::size_t n = appearance.rows.size();
    const std::size_t width = appearance.dim + 6;
    std::vector<double> st(n * width, 0.0);
    std::vector<double> best(n, -1.0);
    for (const auto& d : obs.detections) {
        const auto c = static_cast<std::size_t>(d.class_id);
        if (c >= n) throw DimensionError("detection class " + std::to_string(d.class_id) + " outside class table");
        if (d.confidence <= best[c]) continue;
        best[c] = d.confidence;
        double* row = st.data() + c * width;
        std::copy(appearance.rows[c].begin(), appearance.rows[c].end(), row);
        std::copy(d.bbox.begin(), d.bbox.end(), row + appearance.dim);
        row[appearance.dim + 4] = d.confidence;
        row[appearance.dim + 5] = d.class_id == target ? 1.0 : 0.0;
    }
    ThinkingInputs in;
    in.intuition = obs.local_grid;
    in.search = Tensor(Shape{n, width}, std::move(st));
    in.navigation = tomg_tensor(mem.tomg);
    in.exploration.assign(mem.history.begin(), mem.history.end());
    in.obstacle.assign(mem.obstacles.begin(), mem.obstacles.end());
    in.pose = state;
    return in;
}

/// Egocentric TOMG: (bbox[4], x̃, ỹ, sinΔθ, cosΔθ, sinΔβ, cosΔβ, confidence) → Tensor[D_n×11].
inline Tensor egocentric_tomg(const Tensor& tomg, const AgentState& current) {
    if (tomg.rank() != 2 || tomg.dim(1) != 9) throw DimensionError("TOMG must be [D×9], got " + shape_str(tomg.shape()));
    const std::size_t d = tomg.dim(0);
    std::vector<PoseRow> poses;
    poses.reserve(d);
    for (std::size_t i = 0; i < d; ++i) poses.push_back({tomg[i * 9 + 4], tomg[i * 9 + 5], tomg[i * 9 + 6], tomg[i * 9 + 7]});
    const auto ego = egocentric_rows(poses, current);
    std::vector<double> out;
    out.reserve(d * 11);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < 4; ++j) out.push_back(tomg[i * 9 + j]);
        out.insert(out.end(), ego[i].begin(), ego[i].end());
        out.push_back(tomg[i * 9 + 8]);
    }
    return Tensor(Shape{d, 11}, std::move(out));
}

}  // namespace mtnav
