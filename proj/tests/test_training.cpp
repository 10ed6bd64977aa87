#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>

#include "mtnav/training.hpp"
#include "support/oracles.hpp"

using namespace mtnav;

namespace {

AgentState pose(int x, int y, int heading, int pitch = 0) { return AgentState{{x, y}, heading, pitch}; }

StepResult result(bool collided = false, bool detects_target = false, bool done_valid = false, int target = 0) {
    StepResult r;
    r.collided = collided;
    r.done_valid = done_valid;
    if (detects_target) r.detections.push_back({target, {1, 1}, {0.4, 0.4, 0.6, 0.6}, 0.8});
    r.detections.push_back({target + 1, {2, 1}, {0.1, 0.4, 0.2, 0.6}, 0.5});
    return r;
}

ModelConfig tiny_model(std::size_t classes = 6) {
    ModelConfig c;
    c.num_classes = classes;
    c.conv_channels = 2;
    c.appearance_dim = 4;
    c.thinking_dims = {6, 6, 6, 6, 6};
    c.d_z = 8;
    c.d_g = 8;
    c.lstm_hidden = 8;
    return c;
}

struct Fixture {
    AgentSetup setup;
    TaskSampler sampler;
};

Fixture make_fixture(std::size_t classes = 6) {
    Fixture f;
    f.setup.model = tiny_model(classes);
    f.setup.env.max_steps = 25;
    f.setup.appearance = AppearanceTable::seeded(classes, 4, 7);
    GenConfig g;
    g.width = g.height = 9;
    g.num_classes = static_cast<int>(classes);
    for (std::uint64_t s = 0; s < 3; ++s) f.sampler.plans.push_back(std::make_shared<const FloorPlan>(generate_floorplan(s, g)));
    for (int c = 0; c < static_cast<int>(classes); ++c) f.sampler.target_pool.push_back(c);
    return f;
}

TrainOptions options(std::size_t workers, std::uint64_t episodes) {
    TrainOptions o;
    o.train.workers = workers;
    o.train.total_episodes = episodes;
    o.train.n_step = 7;
    o.train.adam.lr = 1e-3;
    return o;
}

std::vector<double> flat_params(const MtModel& m) {
    std::vector<double> out;
    for (const auto& p : m.params().params()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
    return out;
}

}  // namespace

TEST(Reward, TableOfCases) {
    const RewardConfig cfg;
    const auto cases = oracle::reward_cases();
    ASSERT_GE(cases.size(), 12u);
    for (const auto& c : cases) {
        const auto r = compute_reward(oracle::pose(3, 3, 0), c.action, oracle::case_next(c), oracle::case_result(c),
                                      oracle::case_context(c), cfg, c.use_meta, c.mask);
        EXPECT_EQ(r, oracle::rule_components(c, cfg)) << c.name;
        EXPECT_NEAR(r.total(), c.expected, 1e-12) << c.name;
        if (!c.use_meta) {
            EXPECT_EQ(r.meta(), 0.0) << c.name;
        }
    }
}

TEST(Reward, TrackerLocatesTargetOnlyAfterTheDetectingStep) {
    const RewardConfig cfg;
    RewardTracker tr;
    const AgentState s0 = pose(1, 1, 0);
    tr.reset(s0, 0, false, 5);
    // first step sees the target and gets closer; navigation credit needs prior location
    auto r1 = tr.step(s0, Action::move_ahead, pose(2, 1, 0), result(false, true), 4, cfg, true);
    EXPECT_EQ(r1.search, cfg.r_s);
    EXPECT_EQ(r1.navigation, 0.0);
    auto r2 = tr.step(pose(2, 1, 0), Action::move_ahead, pose(3, 1, 0), result(), 3, cfg, true);
    EXPECT_EQ(r2.navigation, cfg.r_n);
    EXPECT_EQ(r2.search, 0.0);
    // rotating back into the start heading at the start cell is a revisit only if that pose was seen
    auto r3 = tr.step(pose(3, 1, 0), Action::rotate_left, pose(3, 1, 1), result(), 3, cfg, true);
    EXPECT_EQ(r3.exploration, 0.0);
    auto r4 = tr.step(pose(3, 1, 1), Action::rotate_right, pose(3, 1, 0), result(), 3, cfg, true);
    EXPECT_EQ(r4.exploration, cfg.r_e);
    EXPECT_EQ(tr.context().visited.size(), 4u);
}

TEST(Reward, MaskFromToggles) {
    ThinkingToggles t;
    t.enabled = {true, false, true, false, true};
    const RewardMask m = RewardMask::from(t);
    EXPECT_FALSE(m.search);
    EXPECT_TRUE(m.navigation);
    EXPECT_FALSE(m.exploration);
    EXPECT_TRUE(m.obstacle);
}

TEST(Reward, ScheduleCutoff) {
    EXPECT_TRUE(meta_reward_active(RewardSchedule::first_c, 5999, 6000));
    EXPECT_FALSE(meta_reward_active(RewardSchedule::first_c, 6000, 6000));
    EXPECT_TRUE(meta_reward_active(RewardSchedule::all_episodes, 1u << 30, 6000));
    EXPECT_FALSE(meta_reward_active(RewardSchedule::never, 0, 6000));
}

TEST(Loss, ReturnsMatchForwardSumOracle) {
    const LossConfig cfg{0.9, 0.5, 0.01};
    RngStream rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<TrajectoryStep> traj;
        for (std::size_t i = 0; i < n; ++i) {
            traj.push_back({Tensor::row({0.1, 0.2, 0.3, 0.0, -0.1, 0.4}), Tensor(Shape{1, 1}, {rng.uniform(-1, 1)}), rng.below(6),
                            rng.uniform(-1, 1), rng.below(5) == 0});
        }
        const double bootstrap = rng.uniform(-2, 2);
        const RolloutLoss loss = rollout_losses(traj, cfg, bootstrap);
        for (std::size_t t = 0; t < n; ++t) {
            double want = 0.0, disc = 1.0;
            bool ended = false;
            for (std::size_t k = t; k < n; ++k) {
                want += disc * traj[k].reward;
                disc *= cfg.gamma;
                if (traj[k].done) {
                    ended = true;
                    break;
                }
            }
            if (!ended) want += disc * bootstrap;
            EXPECT_NEAR(loss.returns[t], want, 1e-12);
            EXPECT_NEAR(loss.advantages[t], want - traj[t].value.item(), 1e-12);
        }
    }
    EXPECT_THROW(rollout_losses({}, cfg, 0.0), ContractError);
}

TEST(Loss, SingleStepTermsAndGradients) {
    const LossConfig cfg{0.99, 0.5, 0.01};
    Tensor logits = Tensor::row({0, 0, 0, 0, 0, 0}, true);
    Tensor value(Shape{1, 1}, {0.25}, true);
    const std::vector<TrajectoryStep> traj{{logits, value, 2, 1.0, true}};
    Tape tape;
    RolloutLoss loss;
    {
        TapeScope scope(tape);
        loss = rollout_losses(traj, cfg, 123.0);
        tape.backward(loss.total);
    }
    const double adv = 0.75;
    EXPECT_DOUBLE_EQ(loss.returns[0], 1.0);
    EXPECT_NEAR(loss.value, 0.5 * adv * adv, 1e-15);
    EXPECT_NEAR(loss.entropy, std::log(6.0), 1e-12);
    EXPECT_NEAR(loss.policy, std::log(6.0) * adv, 1e-12);
    EXPECT_NEAR(loss.total.item(), std::log(6.0) * adv + 0.5 * adv * adv - 0.01 * std::log(6.0), 1e-12);
    // value gradient: 2·value_coef·(v − R); the advantage is constant for the policy term
    EXPECT_NEAR(value.grad()[0], 2 * 0.5 * (0.25 - 1.0), 1e-12);
    for (std::size_t i = 0; i < 6; ++i) {
        const double onehot = i == 2 ? 1.0 : 0.0;
        EXPECT_NEAR(logits.grad()[i], -adv * (onehot - 1.0 / 6.0), 1e-12);  // entropy gradient vanishes at uniform
    }
}

TEST(Loss, FrozenAdvantagesOverride) {
    const std::vector<TrajectoryStep> traj{{Tensor::row({1, 0, 0, 0, 0, 0}), Tensor(Shape{1, 1}, {0.0}), 0, 1.0, true}};
    const std::vector<double> frozen{2.0};
    const RolloutLoss loss = rollout_losses(traj, {}, 0.0, &frozen);
    EXPECT_EQ(loss.advantages[0], 2.0);
    const std::vector<double> wrong{1.0, 2.0};
    EXPECT_THROW(rollout_losses(traj, {}, 0.0, &wrong), DimensionError);
}

TEST(Sampling, CategoricalFrequencies) {
    RngStream rng(3);
    const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
    std::vector<int> counts(4, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) ++counts[sample_categorical(p, rng)];
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(counts[i] / static_cast<double>(n), p[i], 0.005);
    const auto sm = softmax_values(std::vector<double>{1000, 1000});
    EXPECT_DOUBLE_EQ(sm[0], 0.5);
    EXPECT_EQ(argmax(std::vector<double>{1, 3, 3}), 1u);
}

TEST(Store, ZeroAndNonFiniteGradients) {
    SharedParamStore store(tiny_model(), 1, AdamConfig{});
    const auto before = flat_params(store.model());
    std::vector<std::vector<double>> zeros;
    for (const auto& p : store.model().params().params()) zeros.emplace_back(p.value.numel(), 0.0);
    EXPECT_TRUE(store.apply_gradients(zeros));
    EXPECT_EQ(flat_params(store.model()), before);
    auto bad = zeros;
    bad[0][0] = std::nan("");
    EXPECT_FALSE(store.apply_gradients(bad));
    bad[0][0] = INFINITY;
    EXPECT_FALSE(store.apply_gradients(bad));
    EXPECT_EQ(store.dropped_batches(), 2u);
    EXPECT_EQ(store.applied_batches(), 1u);
    EXPECT_EQ(store.step(), 1u);
    EXPECT_EQ(flat_params(store.model()), before);
}

TEST(Store, SequentialApplicationMatchesDirectAdam) {
    AdamConfig adam;
    adam.lr = 0.01;
    SharedParamStore store(tiny_model(), 2, adam);
    MtModel ref(tiny_model(), 2);
    AdamState state = AdamState::allocate(ref.params());
    RngStream rng(4);
    for (std::uint64_t t = 1; t <= 3; ++t) {
        std::vector<std::vector<double>> g;
        for (const auto& p : ref.params().params()) {
            std::vector<double> v(p.value.numel());
            for (double& x : v) x = rng.uniform(-1, 1);
            g.push_back(std::move(v));
        }
        store.apply_gradients(g);
        adam_step(ref.params(), g, state, adam, t);
    }
    EXPECT_EQ(flat_params(store.model()), flat_params(ref));
}

TEST(Store, EpisodeClaimsStopAtBudget) {
    SharedParamStore store(tiny_model(), 1, AdamConfig{});
    for (std::uint64_t i = 0; i < 3; ++i) EXPECT_EQ(store.claim_episode(3), std::optional<std::uint64_t>(i));
    EXPECT_FALSE(store.claim_episode(3).has_value());
    store.release_episode();
    EXPECT_EQ(store.claim_episode(3), std::optional<std::uint64_t>(2));
}

TEST(Store, CheckpointRestoresCounters) {
    SharedParamStore a(tiny_model(), 1, AdamConfig{}), b(tiny_model(), 9, AdamConfig{});
    std::vector<std::vector<double>> g;
    for (const auto& p : a.model().params().params()) g.emplace_back(p.value.numel(), 0.1);
    a.apply_gradients(g);
    a.claim_episode(10);
    a.finish_episode();
    b.restore(a.checkpoint());
    EXPECT_EQ(flat_params(b.model()), flat_params(a.model()));
    EXPECT_EQ(b.episodes_completed(), 1u);
    EXPECT_EQ(b.step(), 1u);
    EXPECT_EQ(b.claim_episode(10), std::optional<std::uint64_t>(1));
}

TEST(Clip, ScalesToMaxNorm) {
    std::vector<std::vector<double>> g{{3.0}, {4.0}};
    clip_grad_norm(g, 1.0);
    EXPECT_NEAR(g[0][0], 0.6, 1e-15);
    EXPECT_NEAR(g[1][0], 0.8, 1e-15);
    std::vector<std::vector<double>> small{{0.3}};
    clip_grad_norm(small, 1.0);
    EXPECT_EQ(small[0][0], 0.3);
}

TEST(Train, ConfigValidation) {
    TrainConfig c;
    c.workers = 0;
    EXPECT_THROW(validate(c), ConfigError);
    c = {};
    c.gamma = 1.0;
    EXPECT_THROW(validate(c), ConfigError);
    c = {};
    c.adam.lr = 0.0;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(Train, SingleWorkerIsDeterministic) {
    const Fixture f = make_fixture();
    auto run = [&] {
        SharedParamStore store(f.setup.model, 3, AdamConfig{});
        TrainOptions o = options(1, 12);
        train(store, f.setup, f.sampler, o);
        return flat_params(store.model());
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a, b);
    SharedParamStore fresh(f.setup.model, 3, AdamConfig{});
    EXPECT_NE(a, flat_params(fresh.model()));
}

TEST(Train, BatchCountMatchesEpisodeLengths) {
    const Fixture f = make_fixture();
    SharedParamStore store(f.setup.model, 3, AdamConfig{});
    TrainOptions o = options(1, 15);
    std::map<std::uint64_t, int> lengths;
    o.on_step = [&](const TrainStepEvent& e) { lengths[e.episode] = std::max(lengths[e.episode], e.step + 1); };
    const TrainResult r = train(store, f.setup, f.sampler, o);
    EXPECT_EQ(r.episodes, 15u);
    ASSERT_EQ(lengths.size(), 15u);
    std::uint64_t expect = 0;
    for (const auto& [ep, len] : lengths) {
        EXPECT_LE(len, f.setup.env.max_steps);
        expect += static_cast<std::uint64_t>((len + 6) / 7);
    }
    EXPECT_EQ(r.applied_batches, expect);
    EXPECT_EQ(r.worker_batches[0], expect);
}

TEST(Train, FourWorkersShareTheBudget) {
    const Fixture f = make_fixture();
    SharedParamStore store(f.setup.model, 3, AdamConfig{});
    TrainOptions o = options(4, 40);
    std::mutex mu;
    std::set<std::uint64_t> episodes;
    std::set<std::size_t> workers;
    o.on_step = [&](const TrainStepEvent& e) {
        std::lock_guard lock(mu);
        episodes.insert(e.episode);
        workers.insert(e.worker);
    };
    std::stringstream log_text;
    TrainingLog log(&log_text);
    o.log = &log;
    const TrainResult r = train(store, f.setup, f.sampler, o);
    EXPECT_EQ(r.episodes, 40u);
    EXPECT_EQ(store.episodes_completed(), 40u);
    EXPECT_EQ(episodes.size(), 40u);
    EXPECT_EQ(*episodes.rbegin(), 39u);
    std::uint64_t total = 0;
    for (auto b : r.worker_batches) total += b;
    EXPECT_EQ(total, r.applied_batches + r.dropped_batches);
    EXPECT_EQ(store.step(), r.applied_batches);
    std::string line;
    std::uint64_t lines = 0, finished = 0;
    while (std::getline(log_text, line)) {
        const auto j = nlohmann::json::parse(line);
        ++lines;
        if (!j["episode_return"].is_null()) ++finished;
        EXPECT_TRUE(j.contains("loss") && j.contains("entropy") && j.contains("worker"));
    }
    EXPECT_EQ(lines, total);
    EXPECT_EQ(finished, 40u);
}

TEST(Train, MetaRewardsFollowSchedule) {
    const Fixture f = make_fixture();
    for (RewardSchedule sched : {RewardSchedule::first_c, RewardSchedule::never, RewardSchedule::all_episodes}) {
        SharedParamStore store(f.setup.model, 3, AdamConfig{});
        TrainOptions o = options(1, 10);
        o.schedule = sched;
        o.reward.schedule_c = 4;
        bool any_meta = false;
        o.on_step = [&](const TrainStepEvent& e) {
            const bool want = sched == RewardSchedule::all_episodes || (sched == RewardSchedule::first_c && e.episode < 4);
            EXPECT_EQ(e.use_meta, want);
            if (!e.use_meta) {
                EXPECT_EQ(e.reward.meta(), 0.0);
            }
            any_meta = any_meta || e.reward.meta() != 0.0;
            EXPECT_NEAR(e.reward.total(), e.reward_total, 1e-15);
        };
        train(store, f.setup, f.sampler, o);
        EXPECT_EQ(any_meta, sched != RewardSchedule::never);
    }
}

TEST(Train, UndetectableClassesNeverRewardSearch) {
    const Fixture f = make_fixture();
    SharedParamStore store(f.setup.model, 3, AdamConfig{});
    TrainOptions o = options(1, 10);
    o.schedule = RewardSchedule::all_episodes;
    o.detectable.assign(6, true);
    o.detectable[0] = false;
    TaskSampler only_zero = f.sampler;
    only_zero.target_pool = {0};
    o.on_step = [&](const TrainStepEvent& e) {
        EXPECT_EQ(e.target, 0);
        EXPECT_FALSE(e.target_detected);
        EXPECT_EQ(e.reward.search, 0.0);
        EXPECT_EQ(e.reward.success, 0.0);
    };
    train(store, f.setup, only_zero, o);
}

TEST(Train, PeriodicCheckpoints) {
    const Fixture f = make_fixture();
    const auto dir = std::filesystem::temp_directory_path() / "mtnav_test_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    SharedParamStore store(f.setup.model, 3, AdamConfig{});
    TrainOptions o = options(1, 6);
    o.train.checkpoint_interval = 3;
    o.checkpoint_dir = dir;
    train(store, f.setup, f.sampler, o);
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint-3.bin"));
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint-6.bin"));
    const Checkpoint ck = load_checkpoint(dir / "checkpoint-6.bin");
    EXPECT_EQ(ck.episodes, 6u);
    std::filesystem::remove_all(dir);
}
