#pragma once
// Rewards, n-step actor-critic losses and the asynchronous multi-worker trainer.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <thread>
#include <vector>

#include "json.hpp"

#include "mtnav/agent.hpp"
#include "mtnav/env.hpp"
#include "mtnav/memory.hpp"
#include "mtnav/nn.hpp"
#include "mtnav/tensor.hpp"

namespace mtnav {

// ---------------------------------------------------------------------------
// Rewards

struct RewardConfig {
    double step_penalty = -0.01;
    double move_bonus = 0.01;
    double success_reward = 5.0;
    double r_s = 0.01;
    double r_n = 0.01;
    double r_e = -0.01;
    double r_o = -0.01;
    std::uint64_t schedule_c = 6000;  // episodes during which meta-ability rewards apply
};

/// When the meta-ability reward is active.
enum class RewardSchedule { first_c, all_episodes, never };

/// Which meta-ability reward terms exist (a disabled thinking loses its term).
struct RewardMask {
    bool search = true;
    bool navigation = true;
    bool exploration = true;
    bool obstacle = true;

    static RewardMask from(const ThinkingToggles& t) {
        return {t.on(Thinking::search), t.on(Thinking::navigation), t.on(Thinking::exploration), t.on(Thinking::obstacle)};
    }
};

inline constexpr std::size_t kNumRewardComponents = 7;
inline constexpr std::array<const char*, kNumRewardComponents> kRewardNames = {
    "step", "move", "success", "search", "navigation", "exploration", "obstacle"};

/// Base terms (step, move, success) and meta-ability terms (search, navigation, exploration, obstacle).
struct RewardComponents {
    double step = 0.0;
    double move = 0.0;
    double success = 0.0;
    double search = 0.0;
    double navigation = 0.0;
    double exploration = 0.0;
    double obstacle = 0.0;

    double base() const { return step + move + success; }
    double meta() const { return search + navigation + exploration + obstacle; }
    double total() const { return step + move + success + search + navigation + exploration + obstacle; }
    std::array<double, kNumRewardComponents> as_array() const {
        return {step, move, success, search, navigation, exploration, obstacle};
    }
    friend bool operator==(const RewardComponents&, const RewardComponents&) = default;
};

/// Episode facts the reward depends on. `geo_before`/`geo_after` are geodesic
/// cells to the success region around the step (−1 if unreachable).
struct RewardContext {
    int target = 0;
    std::set<AgentState> visited;  // start pose and every post-step pose so far
    bool target_located = false;   // target detected in any observation before this step
    int geo_before = -1;
    int geo_after = -1;
};

inline RewardComponents compute_reward(const AgentState& prev, Action action, const AgentState& next,
                                       const StepResult& result, const RewardContext& ctx, const RewardConfig& cfg,
                                       bool use_meta, RewardMask mask = {}) {
    (void)prev;
    RewardComponents r;
    r.step = cfg.step_penalty;
    if (action == Action::move_ahead) r.move = cfg.move_bonus;
    if (action == Action::done && result.done_valid) r.success = cfg.success_reward;
    if (!use_meta) return r;
    if (mask.search && result.detects(ctx.target)) r.search = cfg.r_s;
    if (mask.navigation && ctx.target_located && ctx.geo_before >= 0 && ctx.geo_after >= 0 &&
        ctx.geo_after < ctx.geo_before) {
        r.navigation = cfg.r_n;
    }
    if (mask.exploration && action != Action::done && ctx.visited.count(next)) r.exploration = cfg.r_e;
    if (mask.obstacle && result.collided) r.obstacle = cfg.r_o;
    return r;
}

/// Maintains a RewardContext across an episode.
class RewardTracker {
public:
    void reset(const AgentState& start, int target, bool detected_at_start, int geo_cells) {
        ctx_ = {};
        ctx_.target = target;
        ctx_.visited.insert(start);
        ctx_.target_located = detected_at_start;
        ctx_.geo_before = geo_cells;
    }

    RewardComponents step(const AgentState& prev, Action action, const AgentState& next, const StepResult& result,
                          int geo_after, const RewardConfig& cfg, bool use_meta, RewardMask mask = {}) {
        ctx_.geo_after = geo_after;
        const RewardComponents r = compute_reward(prev, action, next, result, ctx_, cfg, use_meta, mask);
        ctx_.visited.insert(next);
        ctx_.target_located = ctx_.target_located || result.detects(ctx_.target);
        ctx_.geo_before = geo_after;
        return r;
    }

    const RewardContext& context() const { return ctx_; }

private:
    RewardContext ctx_;
};

// ---------------------------------------------------------------------------
// Actor-critic loss

struct TrajectoryStep {
    Tensor logits;  // [1 × A]
    Tensor value;   // [1 × 1]
    std::size_t action = 0;
    double reward = 0.0;
    bool done = false;
};

struct LossConfig {
    double gamma = 0.99;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
};

struct RolloutLoss {
    Tensor total;
    double policy = 0.0;
    double value = 0.0;    // value_coef · Σ (R − v)²
    double entropy = 0.0;  // Σ H(π_t), before the coefficient
    std::vector<double> returns;
    std::vector<double> advantages;
};

/// n-step returns R_t = r_t + γ R_{t+1}, bootstrapped at the cut (ignored after a
/// terminal step). total = −Σ log π(a_t)·A_t + value_coef Σ (R_t − v_t)² − entropy_coef Σ H_t,
/// with A_t = R_t − v_t held constant. `frozen_advantages`, when given, replaces A_t.
inline RolloutLoss rollout_losses(const std::vector<TrajectoryStep>& traj, const LossConfig& cfg, double bootstrap,
                                  const std::vector<double>* frozen_advantages = nullptr) {
    if (traj.empty()) throw ContractError("rollout_losses: empty trajectory");
    if (frozen_advantages && frozen_advantages->size() != traj.size()) {
        throw DimensionError("rollout_losses: frozen advantage count differs from trajectory length");
    }
    RolloutLoss out;
    const std::size_t n = traj.size();
    out.returns.assign(n, 0.0);
    out.advantages.assign(n, 0.0);
    double running = traj.back().done ? 0.0 : bootstrap;
    for (std::size_t i = n; i-- > 0;) {
        if (traj[i].done) running = 0.0;
        running = traj[i].reward + cfg.gamma * running;
        out.returns[i] = running;
    }
    std::vector<Tensor> terms;
    terms.reserve(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = traj[i];
        const double v = s.value.item();
        out.advantages[i] = frozen_advantages ? (*frozen_advantages)[i] : out.returns[i] - v;
        const Tensor logp = log_softmax_rows(s.logits);
        const Tensor probs = softmax_rows(s.logits);
        const Tensor neg_entropy = sum_all(elementwise_mul(probs, logp));
        const Tensor policy = scale(pick(logp, s.action), -out.advantages[i]);
        const Tensor value = scale(square(scale(reshape(s.value, {1}), 1.0, -out.returns[i])), cfg.value_coef);
        out.policy += policy.item();
        out.value += value.item();
        out.entropy += -neg_entropy.item();
        terms.push_back(policy);
        terms.push_back(value);
        terms.push_back(scale(neg_entropy, cfg.entropy_coef));
    }
    out.total = sum_all(concat(terms, 0));
    return out;
}

// ---------------------------------------------------------------------------
// Agent setup shared by training and evaluation

struct AgentSetup {
    ModelConfig model;
    EnvConfig env;
    MemoryCaps caps;
    AppearanceTable appearance;
    TargetMode target_mode = TargetMode::one_hot;
    std::vector<std::vector<double>> class_embeddings;  // similarity mode only

    TargetCode code_for(int target) const {
        return make_target_code(target, target_mode, model.num_classes,
                                target_mode == TargetMode::similarity ? &class_embeddings : nullptr);
    }
};

inline std::vector<double> softmax_values(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (double& v : p) v /= z;
    return p;
}

inline std::size_t sample_categorical(std::span<const double> probs, RngStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

inline std::size_t argmax(std::span<const double> xs) {
    return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

// ---------------------------------------------------------------------------
// Shared parameter store

class SharedParamStore {
public:
    SharedParamStore(const ModelConfig& cfg, std::uint64_t seed, AdamConfig adam)
        : model_(cfg, seed), adam_cfg_(adam), adam_(AdamState::allocate(model_.params())) {}

    const ModelConfig& model_config() const { return model_.config(); }

    /// Copies current master values into a worker's parameter set.
    void snapshot_into(ParameterSet& local) const {
        std::lock_guard lock(mutex_);
        local.copy_values_from(model_.params());
    }

    /// One Adam step under the store lock. Batches containing non-finite
    /// gradients are dropped and leave parameters untouched. Returns whether applied.
    bool apply_gradients(const std::vector<std::vector<double>>& grads) {
        for (const auto& g : grads) {
            for (double v : g) {
                if (!std::isfinite(v)) {
                    dropped_batches_.fetch_add(1);
                    std::cerr << "warning: dropping gradient batch with non-finite values\n";
                    return false;
                }
            }
        }
        std::lock_guard lock(mutex_);
        ++step_;
        adam_step(model_.params(), grads, adam_, adam_cfg_, step_);
        applied_batches_.fetch_add(1);
        return true;
    }

    /// Claims the next episode index below `total`, or nullopt when the budget is spent.
    std::optional<std::uint64_t> claim_episode(std::uint64_t total) {
        std::uint64_t cur = claimed_.load();
        while (cur < total) {
            if (claimed_.compare_exchange_weak(cur, cur + 1)) return cur;
        }
        return std::nullopt;
    }
    /// Returns an aborted episode's slot to the pool.
    void release_episode() { claimed_.fetch_sub(1); }
    std::uint64_t finish_episode() { return completed_.fetch_add(1) + 1; }

    std::uint64_t episodes_completed() const { return completed_.load(); }
    std::uint64_t applied_batches() const { return applied_batches_.load(); }
    std::uint64_t dropped_batches() const { return dropped_batches_.load(); }
    std::uint64_t step() const {
        std::lock_guard lock(mutex_);
        return step_;
    }

    Checkpoint checkpoint() const {
        std::lock_guard lock(mutex_);
        return Checkpoint::capture(model_.params(), &adam_, step_, completed_.load());
    }

    void restore(const Checkpoint& ck) {
        std::lock_guard lock(mutex_);
        ck.restore(model_.params(), &adam_);
        step_ = ck.step;
        completed_ = ck.episodes;
        claimed_ = ck.episodes;
    }

    /// Direct access for single-threaded setup and evaluation snapshots.
    const MtModel& model() const { return model_; }
    MtModel& model() { return model_; }

private:
    mutable std::mutex mutex_;
    MtModel model_;
    AdamConfig adam_cfg_;
    AdamState adam_;
    std::uint64_t step_ = 0;
    std::atomic<std::uint64_t> claimed_{0};
    std::atomic<std::uint64_t> completed_{0};
    std::atomic<std::uint64_t> applied_batches_{0};
    std::atomic<std::uint64_t> dropped_batches_{0};
};

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    std::size_t workers = 4;
    double gamma = 0.99;
    std::size_t n_step = 20;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    AdamConfig adam;
    std::uint64_t total_episodes = 30000;
    std::uint64_t seed = 1;
    double max_grad_norm = 0.0;  // 0 disables clipping
    std::uint64_t checkpoint_interval = 0;  // episodes; 0 disables periodic checkpoints
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
    if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (cfg.n_step < 1) throw ConfigError("n_step must be >= 1");
    if (!(cfg.adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (cfg.value_coef < 0.0 || cfg.entropy_coef < 0.0 || cfg.max_grad_norm < 0.0) {
        throw ConfigError("loss coefficients and max_grad_norm must be non-negative");
    }
}

/// Uniform plan, then uniform target among pool classes present in that plan.
struct TaskSampler {
    std::vector<std::shared_ptr<const FloorPlan>> plans;
    std::vector<int> target_pool;

    std::pair<std::shared_ptr<const FloorPlan>, int> sample(RngStream& rng) const {
        if (plans.empty() || target_pool.empty()) throw TaskError("task sampler has no plans or targets");
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const auto& plan = plans[rng.below(plans.size())];
            std::vector<int> present;
            for (int c : target_pool)
                if (plan->has_class(c)) present.push_back(c);
            if (present.empty()) continue;
            return {plan, present[rng.below(present.size())]};
        }
        throw TaskError("no plan contains any class from the target pool");
    }
};

/// Append-only JSON-lines sink shared by workers.
class TrainingLog {
public:
    explicit TrainingLog(std::ostream* out = nullptr) : out_(out) {}
    void write(const nlohmann::json& record) {
        if (!out_) return;
        std::lock_guard lock(mutex_);
        *out_ << record.dump() << '\n';
    }

private:
    std::ostream* out_;
    std::mutex mutex_;
};

/// Per-step notification from a training worker.
struct TrainStepEvent {
    std::size_t worker = 0;
    std::uint64_t episode = 0;
    int step = 0;
    int target = 0;
    AgentState prev;
    Action action = Action::done;
    AgentState next;
    bool target_detected = false;
    bool collided = false;
    bool use_meta = false;
    RewardComponents reward;
    double reward_total = 0.0;
};

struct TrainOptions {
    TrainConfig train;
    RewardConfig reward;
    RewardSchedule schedule = RewardSchedule::first_c;
    RewardMask mask;
    std::vector<bool> detectable;  // empty = every class detectable
    TrainingLog* log = nullptr;
    std::filesystem::path checkpoint_dir;  // used when checkpoint_interval > 0
    std::function<void(const TrainStepEvent&)> on_step;  // called from worker threads
};

inline bool meta_reward_active(RewardSchedule schedule, std::uint64_t episode, std::uint64_t schedule_c) {
    switch (schedule) {
        case RewardSchedule::first_c: return episode < schedule_c;
        case RewardSchedule::all_episodes: return true;
        case RewardSchedule::never: return false;
    }
    return false;
}

/// Gradients of every parameter in set order (zeros where none reached).
inline std::vector<std::vector<double>> collect_grads(const ParameterSet& ps) {
    std::vector<std::vector<double>> grads;
    grads.reserve(ps.size());
    for (const auto& p : ps.params()) {
        if (p.value.has_grad()) grads.emplace_back(p.value.grad().begin(), p.value.grad().end());
        else grads.emplace_back(p.value.numel(), 0.0);
    }
    return grads;
}

inline void clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm > max_norm)) return;
    const double s = max_norm / norm;
    for (auto& g : grads)
        for (double& v : g) v *= s;
}

/// Runs one asynchronous actor-critic worker until the shared episode budget is
/// spent. Returns the number of gradient batches this worker submitted.
inline std::uint64_t worker_loop(std::size_t worker_id, SharedParamStore& store, const AgentSetup& setup,
                                 const TaskSampler& sampler, const TrainOptions& opt) {
    const auto& tc = opt.train;
    MtModel local(setup.model, 0);
    EnvConfig env_cfg = setup.env;
    env_cfg.mode = Mode::train;
    NavEnv env(env_cfg);
    env.set_detectable(opt.detectable);
    RngStream rng = RngStream(tc.seed).fork(1000 + worker_id);
    const LossConfig loss_cfg{tc.gamma, tc.value_coef, tc.entropy_coef};

    bool active = false;
    std::uint64_t episode = 0;
    int target = 0;
    int t = 0;
    bool use_meta = false;
    TargetCode code;
    EpisodeMemory memory;
    memory.caps = setup.caps;
    LstmState lstm;
    AgentState state;
    StepResult obs;
    RewardTracker tracker;
    double episode_return = 0.0;
    std::uint64_t batches = 0;

    while (true) {
        if (!active) {
            auto claimed = store.claim_episode(tc.total_episodes);
            if (!claimed) break;
            episode = *claimed;
            try {
                auto [plan, tgt] = sampler.sample(rng);
                target = tgt;
                std::tie(state, obs) = env.reset(plan, target, rng);
            } catch (const TaskError& e) {
                std::cerr << "warning: worker " << worker_id << " aborted episode: " << e.what() << '\n';
                store.release_episode();
                continue;
            }
            code = setup.code_for(target);
            memory.clear();
            update_memories(obs, state, target, memory);
            lstm = local.initial_state();
            tracker.reset(state, target, obs.detects(target), env.geodesic_cells());
            use_meta = meta_reward_active(opt.schedule, episode, opt.reward.schedule_c);
            episode_return = 0.0;
            t = 0;
            active = true;
        }

        store.snapshot_into(local.params());
        local.params().zero_grad();
        std::vector<TrajectoryStep> traj;
        RolloutLoss loss;
        {
            Tape tape;
            TapeScope scope(tape);
            for (std::size_t k = 0; k < tc.n_step && !env.over(); ++k) {
                const ThinkingInputs in = build_inputs(obs, state, target, memory, setup.appearance);
                PolicyOutput out = local.forward(in, code, lstm, Mode::train, rng);
                const auto probs = softmax_values(out.logits.data());
                const auto a = static_cast<Action>(sample_categorical(probs, rng));
                auto [next, result] = env.step(a);
                const RewardComponents r =
                    tracker.step(state, a, next, result, env.geodesic_cells(), opt.reward, use_meta, opt.mask);
                update_memories(result, next, target, memory);
                if (opt.on_step) {
                    opt.on_step({worker_id, episode, t, target, state, a, next, result.detects(target), result.collided,
                                 use_meta, r, r.total()});
                }
                traj.push_back({out.logits, out.value, static_cast<std::size_t>(a), r.total(), result.episode_over});
                episode_return += r.total();
                state = next;
                obs = std::move(result);
                lstm = out.state;
                ++t;
            }
            double bootstrap = 0.0;
            if (!env.over()) {
                NoGradScope no_grad;
                const ThinkingInputs in = build_inputs(obs, state, target, memory, setup.appearance);
                bootstrap = local.forward(in, code, lstm, Mode::train, rng).value.item();
            }
            loss = rollout_losses(traj, loss_cfg, bootstrap);
            tape.backward(loss.total);
        }
        auto grads = collect_grads(local.params());
        clip_grad_norm(grads, tc.max_grad_norm);
        store.apply_gradients(grads);
        ++batches;
        lstm = lstm.detach();
        traj.clear();

        const bool finished = env.over();
        std::uint64_t done_count = 0;
        if (finished) {
            done_count = store.finish_episode();
            active = false;
        }
        if (opt.log) {
            opt.log->write({{"worker", worker_id},
                            {"step", store.step()},
                            {"loss", loss.total.item() / static_cast<double>(loss.returns.size())},
                            {"entropy", loss.entropy / static_cast<double>(loss.returns.size())},
                            {"episodes", store.episodes_completed()},
                            {"episode_return", finished ? nlohmann::json(episode_return) : nlohmann::json()}});
        }
        if (finished && tc.checkpoint_interval > 0 && done_count % tc.checkpoint_interval == 0 &&
            !opt.checkpoint_dir.empty()) {
            save_checkpoint(store.checkpoint(), opt.checkpoint_dir / ("checkpoint-" + std::to_string(done_count) + ".bin"));
        }
    }
    return batches;
}

struct TrainResult {
    std::uint64_t episodes = 0;
    std::uint64_t applied_batches = 0;
    std::uint64_t dropped_batches = 0;
    std::vector<std::uint64_t> worker_batches;
    double seconds = 0.0;
};

/// Trains with `opt.train.workers` workers (inline when there is one).
inline TrainResult train(SharedParamStore& store, const AgentSetup& setup, const TaskSampler& sampler,
                         const TrainOptions& opt) {
    validate(opt.train);
    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    result.worker_batches.assign(opt.train.workers, 0);
    if (opt.train.workers == 1) {
        result.worker_batches[0] = worker_loop(0, store, setup, sampler, opt);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < opt.train.workers; ++w) {
            threads.emplace_back([&, w] { result.worker_batches[w] = worker_loop(w, store, setup, sampler, opt); });
        }
        for (auto& th : threads) th.join();
    }
    result.episodes = store.episodes_completed();
    result.applied_batches = store.applied_batches();
    result.dropped_batches = store.dropped_batches();
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace mtnav
