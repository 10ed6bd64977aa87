#pragma once
// Multiple-thinking agent: five thinking encoders, collaboration gating,
// fused layer-normalized representation and a recurrent actor-critic head.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mtnav/env.hpp"
#include "mtnav/memory.hpp"
#include "mtnav/nn.hpp"
#include "mtnav/tensor.hpp"

namespace mtnav {

enum class Thinking : std::size_t { intuition = 0, search, navigation, exploration, obstacle };
inline constexpr std::size_t kNumThinking = 5;
inline constexpr std::array<const char*, kNumThinking> kThinkingNames = {"intuition", "search", "navigation",
                                                                         "exploration", "obstacle"};

enum class TargetMode { one_hot, similarity };

struct TargetCode {
    TargetMode mode = TargetMode::one_hot;
    Tensor vector;  // [1 × N]
};

/// One-hot indicator, or cosine similarity of every class embedding to the target's.
inline TargetCode make_target_code(int target, TargetMode mode, std::size_t num_classes,
                                   const std::vector<std::vector<double>>* embeddings = nullptr) {
    if (target < 0 || static_cast<std::size_t>(target) >= num_classes) {
        throw TaskError("target class " + std::to_string(target) + " outside 0.." + std::to_string(num_classes - 1));
    }
    std::vector<double> v(num_classes, 0.0);
    if (mode == TargetMode::one_hot) {
        v[static_cast<std::size_t>(target)] = 1.0;
        return {mode, Tensor::row(std::move(v))};
    }
    if (!embeddings || embeddings->size() != num_classes) {
        throw ConfigError("similarity target codes need one embedding per class");
    }
    auto norm = [](const std::vector<double>& e) {
        double s = 0.0;
        for (double x : e) s += x * x;
        return std::sqrt(s);
    };
    const auto& pe = (*embeddings)[static_cast<std::size_t>(target)];
    const double pn = norm(pe);
    for (std::size_t j = 0; j < num_classes; ++j) {
        const auto& e = (*embeddings)[j];
        const double en = norm(e);
        if (en == 0.0 || pn == 0.0) throw ConfigError("class embedding " + std::to_string(j) + " has zero norm");
        if (e.size() != pe.size()) throw ConfigError("class embeddings differ in dimension");
        if (j == static_cast<std::size_t>(target)) {
            v[j] = 1.0;
            continue;
        }
        double dot = 0.0;
        for (std::size_t k = 0; k < e.size(); ++k) dot += e[k] * pe[k];
        v[j] = std::clamp(dot / (en * pn), -1.0, 1.0);
    }
    return {mode, Tensor::row(std::move(v))};
}

struct ThinkingToggles {
    std::array<bool, kNumThinking> enabled{true, true, true, true, true};
    bool mtc = true;

    bool on(Thinking t) const { return enabled[static_cast<std::size_t>(t)]; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(enabled.begin(), enabled.end(), true)); }
};

struct ModelConfig {
    std::size_t num_classes = 22;
    std::size_t it_channels = 8;
    std::size_t conv_channels = 16;
    std::size_t appearance_dim = 16;
    std::array<std::size_t, kNumThinking> thinking_dims{64, 64, 64, 64, 64};
    std::size_t d_z = 128;
    std::size_t d_g = 256;
    std::size_t lstm_hidden = 256;
    std::array<std::size_t, 3> tcn_kernels{1, 3, 5};
    double dropout = 0.3;
    ThinkingToggles toggles;

    std::size_t d_obj() const { return appearance_dim + 6; }
    std::size_t dim(Thinking t) const { return thinking_dims[static_cast<std::size_t>(t)]; }
};

inline void validate(const ModelConfig& cfg) {
    if (cfg.num_classes < 1) throw ConfigError("model needs at least one class");
    if (cfg.toggles.count() == 0) throw ConfigError("at least one thinking must be enabled");
    for (std::size_t k : cfg.tcn_kernels) {
        if (k % 2 == 0) throw ConfigError("TCN kernel sizes must be odd");
    }
    if (cfg.it_channels < 3 || cfg.conv_channels < 1 || cfg.d_z < 1 || cfg.d_g < 1 || cfg.lstm_hidden < 1) {
        throw ConfigError("model dimensions must be positive (it_channels >= 3)");
    }
    for (std::size_t d : cfg.thinking_dims) {
        if (d < 1) throw ConfigError("thinking dimensions must be positive");
    }
    std::size_t fused = 0;
    for (std::size_t i = 0; i < kNumThinking; ++i)
        if (cfg.toggles.enabled[i]) fused += cfg.thinking_dims[i];
    if (fused < 2) throw ConfigError("fused thinking width must be at least 2 for layer normalization");
    if (!(cfg.dropout >= 0.0) || cfg.dropout >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
}

/// Encoder outputs X T_o and, after collaboration, the recalibrated X T_c.
/// Disabled thinkings stay empty.
struct ThinkingOutputs {
    std::array<std::optional<Tensor>, kNumThinking> raw;
    std::array<std::optional<Tensor>, kNumThinking> recalibrated;
    std::array<std::optional<Tensor>, kNumThinking> gates;
};

/// Mean of each recalibrated output in the order I, S, N, E, O (0 for disabled thinkings).
inline std::array<double, kNumThinking> activation_means(const ThinkingOutputs& out) {
    std::array<double, kNumThinking> means{};
    for (std::size_t i = 0; i < kNumThinking; ++i) {
        if (!out.recalibrated[i]) continue;
        const auto data = out.recalibrated[i]->data();
        double s = 0.0;
        for (double v : data) s += v;
        means[i] = s / static_cast<double>(data.size());
    }
    return means;
}

struct PolicyOutput {
    Tensor logits;  // [1 × 6] in action order
    Tensor value;   // [1 × 1]
    LstmState state;
    ThinkingOutputs thinking;
};

class MtModel {
public:
    explicit MtModel(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        validate(cfg_);
        RngStream rng(seed);
        const auto& tg = cfg_.toggles;
        if (tg.on(Thinking::intuition)) {
            it_conv_w_ = params_.add_uniform("intuition.conv.w", {cfg_.conv_channels, cfg_.it_channels}, cfg_.it_channels, rng);
            it_conv_b_ = params_.add_constant("intuition.conv.b", {cfg_.conv_channels}, 0.0);
            it_proj_ = Linear::create(params_, "intuition.proj", cfg_.conv_channels * 49, cfg_.dim(Thinking::intuition), rng);
        }
        if (tg.on(Thinking::search)) {
            st_w_ = params_.add_uniform("search.w", {cfg_.d_obj(), cfg_.dim(Thinking::search)}, cfg_.d_obj(), rng);
            attention_logits_ = params_.add_constant("search.attention_logits", {cfg_.num_classes, cfg_.num_classes}, 0.0);
        }
        if (tg.on(Thinking::navigation)) {
            for (std::size_t j = 0; j < 3; ++j) {
                tcn_[j] = TemporalConv::create(params_, "navigation.tcn" + std::to_string(j), cfg_.tcn_kernels[j], 11, rng);
            }
            nt_feat_ = Linear::create(params_, "navigation.feature", 11, cfg_.dim(Thinking::navigation), rng);
            fe1_ = Linear::create(params_, "navigation.target_fc1", cfg_.num_classes, cfg_.dim(Thinking::navigation), rng);
            fe2_ = Linear::create(params_, "navigation.target_fc2", cfg_.dim(Thinking::navigation),
                                  cfg_.dim(Thinking::navigation), rng);
        }
        if (tg.on(Thinking::exploration)) {
            et1_ = Linear::create(params_, "exploration.fc1", 7, cfg_.dim(Thinking::exploration), rng);
            et2_ = Linear::create(params_, "exploration.fc2", cfg_.dim(Thinking::exploration), cfg_.dim(Thinking::exploration), rng);
        }
        if (tg.on(Thinking::obstacle)) {
            ot1_ = Linear::create(params_, "obstacle.fc1", 3, cfg_.dim(Thinking::obstacle), rng);
            ot2_ = Linear::create(params_, "obstacle.fc2", cfg_.dim(Thinking::obstacle), cfg_.dim(Thinking::obstacle), rng);
        }
        std::size_t fused = 0;
        for (std::size_t i = 0; i < kNumThinking; ++i)
            if (tg.enabled[i]) fused += cfg_.thinking_dims[i];
        if (tg.mtc) {
            squeeze_ = Linear::create(params_, "mtc.squeeze", fused, cfg_.d_z, rng);
            for (std::size_t i = 0; i < kNumThinking; ++i) {
                if (!tg.enabled[i]) continue;
                excite_[i] = Linear::create(params_, std::string("mtc.excite.") + kThinkingNames[i], cfg_.d_z,
                                            cfg_.thinking_dims[i], rng);
            }
        }
        fuse_norm_ = LayerNorm::create(params_, "policy.norm", fused);
        fuse_ = Linear::create(params_, "policy.fuse", fused, cfg_.d_g, rng);
        lstm_ = LstmParams::create(params_, "policy.lstm", cfg_.d_g + cfg_.num_classes, cfg_.lstm_hidden, rng);
        actor_ = Linear::create(params_, "policy.actor", cfg_.lstm_hidden, kNumActions, rng);
        critic_ = Linear::create(params_, "policy.critic", cfg_.lstm_hidden, 1, rng);
    }

    MtModel(const MtModel&) = delete;
    MtModel& operator=(const MtModel&) = delete;
    MtModel(MtModel&&) = default;
    MtModel& operator=(MtModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    LstmState initial_state() const { return LstmState::zeros(cfg_.lstm_hidden); }

    /// Pointwise conv → ReLU → flatten → affine → ReLU → dropout.
    Tensor encode_intuition(const Tensor& it, Mode mode, RngStream& rng) const {
        if (it.rank() != 3 || it.dim(0) != cfg_.it_channels || it.dim(1) != 7 || it.dim(2) != 7) {
            throw DimensionError("intuition input must be [" + std::to_string(cfg_.it_channels) + "x7x7], got " +
                                 shape_str(it.shape()));
        }
        const Tensor conv = relu(pointwise_conv(it, it_conv_w_, it_conv_b_));
        const Tensor flat = reshape(conv, {1, conv.numel()});
        return dropout(relu(it_proj_(flat)), cfg_.dropout, mode, rng);
    }

    /// Target-conditioned attention over object rows: Σ_j a_j · ReLU(ST_i W)_j, then dropout.
    Tensor encode_search(const Tensor& st, const TargetCode& target, Mode mode, RngStream& rng) const {
        if (st.rank() != 2 || st.dim(0) != cfg_.num_classes || st.dim(1) != cfg_.d_obj()) {
            throw DimensionError("search input must be [" + std::to_string(cfg_.num_classes) + "x" +
                                 std::to_string(cfg_.d_obj()) + "], got " + shape_str(st.shape()));
        }
        const Tensor encoded = relu(matmul(st, st_w_));
        const Tensor coeffs = attention_row(target);
        return dropout(matmul(coeffs, encoded), cfg_.dropout, mode, rng);
    }

    /// Attention coefficients G^p [1×N]: the target's row of the row-softmaxed
    /// graph, or a similarity-weighted convex mixture of rows in similarity mode.
    Tensor attention_row(const TargetCode& target) const {
        std::vector<double> w(target.vector.data().begin(), target.vector.data().end());
        if (target.mode == TargetMode::similarity) {
            double total = 0.0;
            for (double& v : w) {
                v = std::max(v, 0.0);
                total += v;
            }
            if (total <= 0.0) throw ContractError("similarity code has no positive entry");
            for (double& v : w) v /= total;
        }
        return matmul(Tensor::row(std::move(w)), softmax_rows(attention_logits_));
    }

    /// Multi-scale temporal aggregation of the egocentric TOMG, gated by the target code.
    Tensor encode_navigation(const std::optional<Tensor>& nt, const AgentState& current, const TargetCode& target,
                             Mode mode, RngStream& rng) const {
        const std::size_t d = cfg_.dim(Thinking::navigation);
        if (!nt) return Tensor::zeros({1, d});
        const Tensor ego = egocentric_tomg(*nt, current);
        Tensor h = tcn_[0](ego);
        h = add(h, tcn_[1](ego));
        h = add(h, tcn_[2](ego));
        const Tensor features = relu(nt_feat_(ego));
        const Tensor pooled = matmul(reshape(h, {1, h.numel()}), features);
        const Tensor target_gate = sigmoid(fe2_(relu(fe1_(target.vector))));
        return dropout(elementwise_mul(pooled, target_gate), cfg_.dropout, mode, rng);
    }

    /// Mean over history rows of a two-layer MLP on egocentric polar poses.
    Tensor encode_exploration(const std::vector<PoseRow>& history, const AgentState& current) const {
        if (history.empty()) throw ContractError("exploration memory is empty (history always holds the start pose)");
        const Tensor polar = polarize(egocentric_transform(history, current));
        return reduce(et2_(relu(et1_(polar))), 0, Reduction::mean, true);
    }

    Tensor encode_obstacle(const std::vector<std::array<double, 2>>& obstacles, const AgentState& current) const {
        if (obstacles.empty()) return Tensor::zeros({1, cfg_.dim(Thinking::obstacle)});
        const Tensor polar = polarize(egocentric_positions(obstacles, current));
        return reduce(ot2_(relu(ot1_(polar))), 0, Reduction::mean, true);
    }

    ThinkingOutputs encode(const ThinkingInputs& in, const TargetCode& target, Mode mode, RngStream& rng) const {
        ThinkingOutputs out;
        const auto& tg = cfg_.toggles;
        using enum Thinking;
        if (tg.on(intuition)) out.raw[0] = encode_intuition(in.intuition, mode, rng);
        if (tg.on(search)) out.raw[1] = encode_search(in.search, target, mode, rng);
        if (tg.on(navigation)) out.raw[2] = encode_navigation(in.navigation, in.pose, target, mode, rng);
        if (tg.on(exploration)) out.raw[3] = encode_exploration(in.exploration, in.pose);
        if (tg.on(obstacle)) out.raw[4] = encode_obstacle(in.obstacle, in.pose);
        return out;
    }

    /// Z = ReLU(W_Z [outputs] + b_Z); X T_c = X T_o ⊙ σ(W_X Z + b_X). Identity when collaboration is off.
    void recalibrate(ThinkingOutputs& out) const {
        if (!cfg_.toggles.mtc) {
            out.recalibrated = out.raw;
            return;
        }
        const Tensor z = relu(squeeze_(concat(present(out.raw), 1)));
        for (std::size_t i = 0; i < kNumThinking; ++i) {
            if (!out.raw[i]) continue;
            out.gates[i] = sigmoid((*excite_[i])(z));
            out.recalibrated[i] = elementwise_mul(*out.raw[i], *out.gates[i]);
        }
    }

    /// Fuses recalibrated outputs, appends the target code and advances the LSTM.
    PolicyOutput policy(ThinkingOutputs thinking, const TargetCode& target, const LstmState& state) const {
        const Tensor fused = relu(fuse_(fuse_norm_(concat(present(thinking.recalibrated), 1))));
        LstmState next = lstm_step(concat({fused, target.vector}, 1), state, lstm_);
        Tensor logits = actor_(next.h);
        Tensor value = critic_(next.h);
        return {std::move(logits), std::move(value), std::move(next), std::move(thinking)};
    }

    PolicyOutput forward(const ThinkingInputs& in, const TargetCode& target, const LstmState& state, Mode mode,
                         RngStream& rng) const {
        ThinkingOutputs thinking = encode(in, target, mode, rng);
        recalibrate(thinking);
        return policy(std::move(thinking), target, state);
    }

    /// Parameter whose name starts with `prefix` exists.
    bool has_parameters(const std::string& prefix) const {
        for (const auto& p : params_.params())
            if (p.name.rfind(prefix, 0) == 0) return true;
        return false;
    }

private:
    static std::vector<Tensor> present(const std::array<std::optional<Tensor>, kNumThinking>& xs) {
        std::vector<Tensor> out;
        for (const auto& x : xs)
            if (x) out.push_back(*x);
        return out;
    }

    ModelConfig cfg_;
    ParameterSet params_;
    Tensor it_conv_w_, it_conv_b_;
    Linear it_proj_;
    Tensor st_w_, attention_logits_;
    std::array<TemporalConv, 3> tcn_;
    Linear nt_feat_, fe1_, fe2_;
    Linear et1_, et2_;
    Linear ot1_, ot2_;
    Linear squeeze_;
    std::array<std::optional<Linear>, kNumThinking> excite_;
    LayerNorm fuse_norm_;
    Linear fuse_;
    LstmParams lstm_;
    Linear actor_, critic_;
};

}  // namespace mtnav
