#pragma once
// Run configuration (JSON), seen/unseen class splits and experiment assembly
// shared by the command-line tool and the tests.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtnav/metrics.hpp"
#include "mtnav/training.hpp"

namespace mtnav {

struct MapsConfig {
    GenConfig gen;
    std::size_t train = 16;
    std::size_t val = 0;
    std::size_t test = 4;
    std::uint64_t seed = 2024;
    std::string file;  // existing plan suite; generated from the fields above when empty
};

struct EvalConfig {
    std::size_t episodes = 100;
    Split split = Split::test;
    std::string targets = "all";  // all | seen | unseen
    bool greedy = true;
    bool random_policy = false;
    std::uint64_t seed = 99;
    bool log_meta_rewards = true;
};

struct AblationConfig {
    std::vector<std::string> toggles;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ZeroShotConfig {
    bool enabled = false;
    std::string embedding_file;  // synthetic seeded embeddings when empty
    std::size_t embedding_dim = 8;
    std::string split = "18/4";  // 18/4 | 14/8 | custom
    std::vector<int> seen;
    std::vector<int> unseen;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs/default";
    std::size_t num_classes = 22;
    std::uint64_t appearance_seed = 7;
    MapsConfig maps;
    EnvConfig env;
    MemoryCaps memory;
    ModelConfig model;
    RewardConfig reward;
    RewardSchedule schedule = RewardSchedule::first_c;
    TrainConfig train;
    EvalConfig eval;
    AblationConfig ablation;
    ZeroShotConfig zero_shot;
};

// ---------------------------------------------------------------------------
// JSON reading with unknown-key detection

namespace detail {

class JsonReader {
public:
    JsonReader(const nlohmann::json& j, std::string path, std::vector<std::string>& unknown)
        : j_(j), path_(std::move(path)), unknown_(unknown) {
        if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    }

    ~JsonReader() {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) unknown_.push_back(path_.empty() ? it.key() : path_ + "." + it.key());
    }

    template <class T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + full(key) + "' has the wrong type");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    /// Reads a child object (empty if absent) with `fn(JsonReader&)`.
    template <class Fn>
    void section(const std::string& key, Fn&& fn) {
        used_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        JsonReader child(j_.contains(key) ? j_.at(key) : empty, full(key), unknown_);
        fn(child);
    }

private:
    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const nlohmann::json& j_;
    std::string path_;
    std::vector<std::string>& unknown_;
    std::set<std::string> used_;
};

inline const char* schedule_name(RewardSchedule s) {
    switch (s) {
        case RewardSchedule::first_c: return "first_c";
        case RewardSchedule::all_episodes: return "all_episodes";
        case RewardSchedule::never: return "never";
    }
    return "?";
}

inline RewardSchedule parse_schedule(const std::string& s) {
    if (s == "first_c") return RewardSchedule::first_c;
    if (s == "all_episodes") return RewardSchedule::all_episodes;
    if (s == "never") return RewardSchedule::never;
    throw ConfigError("unknown reward schedule '" + s + "' (first_c | all_episodes | never)");
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    using nlohmann::json;
    json thinkings = json::object();
    for (std::size_t i = 0; i < kNumThinking; ++i) thinkings[kThinkingNames[i]] = c.model.toggles.enabled[i];
    json dims = json::object();
    for (std::size_t i = 0; i < kNumThinking; ++i) dims[kThinkingNames[i]] = c.model.thinking_dims[i];
    return {
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"num_classes", c.num_classes},
        {"appearance_seed", c.appearance_seed},
        {"maps",
         {{"width", c.maps.gen.width},
          {"height", c.maps.gen.height},
          {"obstacle_density", c.maps.gen.obstacle_density},
          {"instances_per_class", c.maps.gen.instances_per_class},
          {"extra_objects", c.maps.gen.extra_objects},
          {"train", c.maps.train},
          {"val", c.maps.val},
          {"test", c.maps.test},
          {"seed", c.maps.seed},
          {"file", c.maps.file}}},
        {"env",
         {{"max_steps", c.env.max_steps},
          {"view_range", c.env.view.range_cells},
          {"half_fov", c.env.view.half_fov_deg},
          {"success_distance", c.env.view.success_distance_m},
          {"local_channels", c.env.view.local_channels}}},
        {"memory", {{"navigation", c.memory.navigation}, {"exploration", c.memory.exploration}, {"obstacle", c.memory.obstacle}}},
        {"model",
         {{"it_channels", c.model.it_channels},
          {"conv_channels", c.model.conv_channels},
          {"appearance_dim", c.model.appearance_dim},
          {"thinking_dims", dims},
          {"d_z", c.model.d_z},
          {"d_g", c.model.d_g},
          {"lstm_hidden", c.model.lstm_hidden},
          {"tcn_kernels", c.model.tcn_kernels},
          {"dropout", c.model.dropout},
          {"thinkings", thinkings},
          {"mtc", c.model.toggles.mtc}}},
        {"reward",
         {{"step_penalty", c.reward.step_penalty},
          {"move_bonus", c.reward.move_bonus},
          {"success_reward", c.reward.success_reward},
          {"r_s", c.reward.r_s},
          {"r_n", c.reward.r_n},
          {"r_e", c.reward.r_e},
          {"r_o", c.reward.r_o},
          {"schedule_c", c.reward.schedule_c},
          {"schedule", detail::schedule_name(c.schedule)}}},
        {"train",
         {{"workers", c.train.workers},
          {"gamma", c.train.gamma},
          {"n_step", c.train.n_step},
          {"value_coef", c.train.value_coef},
          {"entropy_coef", c.train.entropy_coef},
          {"lr", c.train.adam.lr},
          {"total_episodes", c.train.total_episodes},
          {"max_grad_norm", c.train.max_grad_norm},
          {"checkpoint_interval", c.train.checkpoint_interval}}},
        {"eval",
         {{"episodes", c.eval.episodes},
          {"split", split_name(c.eval.split)},
          {"targets", c.eval.targets},
          {"greedy", c.eval.greedy},
          {"random_policy", c.eval.random_policy},
          {"seed", c.eval.seed},
          {"log_meta_rewards", c.eval.log_meta_rewards}}},
        {"ablation", {{"toggles", c.ablation.toggles}, {"seeds", c.ablation.seeds}}},
        {"zero_shot",
         {{"enabled", c.zero_shot.enabled},
          {"embedding_file", c.zero_shot.embedding_file},
          {"embedding_dim", c.zero_shot.embedding_dim},
          {"split", c.zero_shot.split},
          {"seen", c.zero_shot.seen},
          {"unseen", c.zero_shot.unseen}}},
    };
}

inline void validate(const RunConfig& c) {
    validate(c.maps.gen);
    validate(c.model);
    validate(c.train);
    if (c.maps.train + c.maps.val + c.maps.test == 0 && c.maps.file.empty()) throw ConfigError("maps: no plans requested");
    if (c.eval.targets != "all" && c.eval.targets != "seen" && c.eval.targets != "unseen") {
        throw ConfigError("eval.targets must be all, seen or unseen");
    }
    if (c.eval.episodes == 0) throw ConfigError("eval.episodes must be positive");
    if (c.env.max_steps < 1) throw ConfigError("env.max_steps must be positive");
    if (c.env.view.local_channels < 3) throw ConfigError("env.local_channels must be at least 3");
    if (c.model.it_channels != static_cast<std::size_t>(c.env.view.local_channels)) {
        throw ConfigError("model.it_channels must equal env.local_channels");
    }
    for (double v : {c.reward.step_penalty, c.reward.move_bonus, c.reward.success_reward, c.reward.r_s, c.reward.r_n,
                     c.reward.r_e, c.reward.r_o}) {
        if (!std::isfinite(v)) throw ConfigError("reward values must be finite");
    }
    const auto& z = c.zero_shot;
    if (z.split != "18/4" && z.split != "14/8" && z.split != "custom") {
        throw ConfigError("zero_shot.split must be 18/4, 14/8 or custom");
    }
    if (z.split == "custom" || !z.seen.empty() || !z.unseen.empty()) {
        std::set<int> seen(z.seen.begin(), z.seen.end());
        for (int u : z.unseen)
            if (seen.count(u)) throw ConfigError("zero_shot: class " + std::to_string(u) + " is both seen and unseen");
        for (int v : z.seen)
            if (v < 0 || static_cast<std::size_t>(v) >= c.num_classes) throw ConfigError("zero_shot: seen class out of range");
        for (int v : z.unseen)
            if (v < 0 || static_cast<std::size_t>(v) >= c.num_classes) throw ConfigError("zero_shot: unseen class out of range");
    }
    if (z.enabled && z.split == "custom" && (z.unseen.empty() || z.seen.empty())) {
        throw ConfigError("zero_shot: custom split needs non-empty seen and unseen lists");
    }
    if (z.enabled && z.embedding_dim == 0 && z.embedding_file.empty()) throw ConfigError("zero_shot.embedding_dim must be positive");
    if (!z.embedding_file.empty() && !std::filesystem::exists(z.embedding_file)) {
        throw ConfigError("embedding file not found: " + z.embedding_file);
    }
    if (!c.maps.file.empty() && !std::filesystem::exists(c.maps.file)) throw ConfigError("plan file not found: " + c.maps.file);
    for (const auto& t : c.ablation.toggles) (void)apply_toggle({"base", c.model, c.schedule, {}}, t);
}

/// Parses a config document; relative file paths resolve against `base_dir`.
inline RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    std::vector<std::string> unknown;
    {
        detail::JsonReader r(doc, "", unknown);
        r.get("seed", c.seed);
        r.get("output_dir", c.output_dir);
        r.get("num_classes", c.num_classes);
        r.get("appearance_seed", c.appearance_seed);
        r.section("maps", [&](detail::JsonReader& m) {
            m.get("width", c.maps.gen.width);
            m.get("height", c.maps.gen.height);
            m.get("obstacle_density", c.maps.gen.obstacle_density);
            m.get("instances_per_class", c.maps.gen.instances_per_class);
            m.get("extra_objects", c.maps.gen.extra_objects);
            m.get("train", c.maps.train);
            m.get("val", c.maps.val);
            m.get("test", c.maps.test);
            m.get("seed", c.maps.seed);
            m.get("file", c.maps.file);
        });
        r.section("env", [&](detail::JsonReader& e) {
            e.get("max_steps", c.env.max_steps);
            e.get("view_range", c.env.view.range_cells);
            e.get("half_fov", c.env.view.half_fov_deg);
            e.get("success_distance", c.env.view.success_distance_m);
            e.get("local_channels", c.env.view.local_channels);
        });
        r.section("memory", [&](detail::JsonReader& m) {
            m.get("navigation", c.memory.navigation);
            m.get("exploration", c.memory.exploration);
            m.get("obstacle", c.memory.obstacle);
        });
        r.section("model", [&](detail::JsonReader& m) {
            m.get("it_channels", c.model.it_channels);
            m.get("conv_channels", c.model.conv_channels);
            m.get("appearance_dim", c.model.appearance_dim);
            m.section("thinking_dims", [&](detail::JsonReader& d) {
                for (std::size_t i = 0; i < kNumThinking; ++i) d.get(kThinkingNames[i], c.model.thinking_dims[i]);
            });
            m.get("d_z", c.model.d_z);
            m.get("d_g", c.model.d_g);
            m.get("lstm_hidden", c.model.lstm_hidden);
            m.get("tcn_kernels", c.model.tcn_kernels);
            m.get("dropout", c.model.dropout);
            m.section("thinkings", [&](detail::JsonReader& t) {
                for (std::size_t i = 0; i < kNumThinking; ++i) {
                    bool on = c.model.toggles.enabled[i];
                    t.get(kThinkingNames[i], on);
                    c.model.toggles.enabled[i] = on;
                }
            });
            m.get("mtc", c.model.toggles.mtc);
        });
        r.section("reward", [&](detail::JsonReader& w) {
            w.get("step_penalty", c.reward.step_penalty);
            w.get("move_bonus", c.reward.move_bonus);
            w.get("success_reward", c.reward.success_reward);
            w.get("r_s", c.reward.r_s);
            w.get("r_n", c.reward.r_n);
            w.get("r_e", c.reward.r_e);
            w.get("r_o", c.reward.r_o);
            w.get("schedule_c", c.reward.schedule_c);
            std::string schedule = detail::schedule_name(c.schedule);
            w.get("schedule", schedule);
            c.schedule = detail::parse_schedule(schedule);
        });
        r.section("train", [&](detail::JsonReader& t) {
            t.get("workers", c.train.workers);
            t.get("gamma", c.train.gamma);
            t.get("n_step", c.train.n_step);
            t.get("value_coef", c.train.value_coef);
            t.get("entropy_coef", c.train.entropy_coef);
            t.get("lr", c.train.adam.lr);
            t.get("total_episodes", c.train.total_episodes);
            t.get("max_grad_norm", c.train.max_grad_norm);
            t.get("checkpoint_interval", c.train.checkpoint_interval);
        });
        r.section("eval", [&](detail::JsonReader& e) {
            e.get("episodes", c.eval.episodes);
            std::string split = split_name(c.eval.split);
            e.get("split", split);
            try {
                c.eval.split = parse_split(split);
            } catch (const std::exception&) {
                throw ConfigError("eval.split must be train, val or test");
            }
            e.get("targets", c.eval.targets);
            e.get("greedy", c.eval.greedy);
            e.get("random_policy", c.eval.random_policy);
            e.get("seed", c.eval.seed);
            e.get("log_meta_rewards", c.eval.log_meta_rewards);
        });
        r.section("ablation", [&](detail::JsonReader& a) {
            a.get("toggles", c.ablation.toggles);
            a.get("seeds", c.ablation.seeds);
        });
        r.section("zero_shot", [&](detail::JsonReader& z) {
            z.get("enabled", c.zero_shot.enabled);
            z.get("embedding_file", c.zero_shot.embedding_file);
            z.get("embedding_dim", c.zero_shot.embedding_dim);
            z.get("split", c.zero_shot.split);
            z.get("seen", c.zero_shot.seen);
            z.get("unseen", c.zero_shot.unseen);
        });
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }
    c.model.num_classes = c.num_classes;
    c.maps.gen.num_classes = static_cast<int>(c.num_classes);
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative() && !base_dir.empty()) p = (base_dir / p).lexically_normal().string();
    };
    resolve(c.zero_shot.embedding_file);
    resolve(c.maps.file);
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(is, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

/// Writes the fully resolved config next to a run's outputs.
inline void echo_config(const RunConfig& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "resolved_config.json");
    if (!os) throw IoError("cannot write " + (dir / "resolved_config.json").string());
    os << to_json(c).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Class splits

struct TaskSplit {
    std::vector<int> seen;
    std::vector<int> unseen;
};

/// Classes fall into 4 pools (class c → pool c mod 4); `per_pool` unseen classes are
/// drawn from each pool with a seeded shuffle.
inline TaskSplit pooled_split(std::size_t num_classes, std::size_t per_pool, std::uint64_t seed) {
    std::array<std::vector<int>, 4> pools;
    for (std::size_t c = 0; c < num_classes; ++c) pools[c % 4].push_back(static_cast<int>(c));
    RngStream rng = RngStream(seed).fork(0x73706c6974ULL);
    std::set<int> unseen;
    for (auto& pool : pools) {
        if (pool.size() <= per_pool) {
            throw ConfigError("class pool too small for the requested split (" + std::to_string(num_classes) + " classes)");
        }
        for (std::size_t k = 0; k < per_pool; ++k) {
            const std::size_t j = k + rng.below(pool.size() - k);
            std::swap(pool[k], pool[j]);
            unseen.insert(pool[k]);
        }
    }
    TaskSplit s;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (unseen.count(static_cast<int>(c))) s.unseen.push_back(static_cast<int>(c));
        else s.seen.push_back(static_cast<int>(c));
    }
    return s;
}

/// All classes seen when zero-shot mode is off.
inline TaskSplit resolve_split(const RunConfig& c) {
    TaskSplit s;
    if (!c.zero_shot.enabled) {
        for (std::size_t i = 0; i < c.num_classes; ++i) s.seen.push_back(static_cast<int>(i));
        return s;
    }
    if (c.zero_shot.split == "custom") return {c.zero_shot.seen, c.zero_shot.unseen};
    return pooled_split(c.num_classes, c.zero_shot.split == "18/4" ? 1 : 2, c.maps.seed);
}

enum class Phase { train, eval };

struct SplitUse {
    std::vector<int> targets;
    std::vector<bool> detectable;  // empty = all classes detectable
};

/// Training samples seen targets and cannot detect unseen classes; evaluation uses
/// the requested set with full detection.
inline SplitUse apply_split(const TaskSplit& split, Phase phase, std::size_t num_classes,
                            const std::string& eval_targets = "all") {
    SplitUse u;
    auto check = [&](int c) {
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw TaskError("class " + std::to_string(c) + " out of range");
    };
    for (int c : split.seen) check(c);
    for (int c : split.unseen) check(c);
    if (phase == Phase::train) {
        u.targets = split.seen;
        if (!split.unseen.empty()) {
            u.detectable.assign(num_classes, true);
            for (int c : split.unseen) u.detectable[static_cast<std::size_t>(c)] = false;
        }
        return u;
    }
    if (eval_targets == "seen") u.targets = split.seen;
    else if (eval_targets == "unseen") u.targets = split.unseen;
    else {
        for (std::size_t c = 0; c < num_classes; ++c) u.targets.push_back(static_cast<int>(c));
    }
    if (u.targets.empty()) throw TaskError("evaluation target set '" + eval_targets + "' is empty");
    return u;
}

// ---------------------------------------------------------------------------
// Class embeddings

/// Text table: one row per class, `name v1 v2 ...`; '#' starts a comment line.
inline std::vector<std::vector<double>> read_embeddings(std::istream& is, std::size_t num_classes) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t dim = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string name;
        ss >> name;
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (!ss.eof()) throw IoError("embedding row '" + name + "' has a non-numeric entry");
        if (v.empty()) throw IoError("embedding row '" + name + "' has no values");
        if (dim == 0) dim = v.size();
        if (v.size() != dim) throw IoError("embedding row '" + name + "' has inconsistent dimension");
        rows.push_back(std::move(v));
    }
    if (rows.size() != num_classes) {
        throw IoError("embedding table has " + std::to_string(rows.size()) + " rows, expected " + std::to_string(num_classes));
    }
    return rows;
}

inline std::vector<std::vector<double>> load_embeddings(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read embeddings from " + path.string());
    return read_embeddings(is, num_classes);
}

inline std::vector<std::vector<double>> synthetic_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
    return AppearanceTable::seeded(num_classes, dim, seed ^ 0x656d62ULL).rows;
}

// ---------------------------------------------------------------------------
// Experiment assembly

/// Plans for a config: loaded from maps.file, else generated (plan i from a derived
/// seed; generation failures move on to the next seed).
inline std::vector<FloorPlan> build_plans(const RunConfig& c) {
    if (!c.maps.file.empty()) return load_plans(c.maps.file);
    std::vector<FloorPlan> plans;
    RngStream seeds(c.maps.seed);
    const std::size_t total = c.maps.train + c.maps.val + c.maps.test;
    std::size_t failures = 0;
    while (plans.size() < total) {
        try {
            FloorPlan p = generate_floorplan(seeds.next_u64() >> 16, c.maps.gen);
            const std::size_t i = plans.size();
            p.split = i < c.maps.train ? Split::train : i < c.maps.train + c.maps.val ? Split::val : Split::test;
            plans.push_back(std::move(p));
        } catch (const GenerationError&) {
            if (++failures > 100 * total + 100) throw;
        }
    }
    return plans;
}

inline std::vector<std::shared_ptr<const FloorPlan>> plans_in(const std::vector<FloorPlan>& plans, Split split) {
    std::vector<std::shared_ptr<const FloorPlan>> out;
    for (const auto& p : plans)
        if (p.split == split) out.push_back(std::make_shared<const FloorPlan>(p));
    return out;
}

inline AgentSetup build_setup(const RunConfig& c) {
    AgentSetup s;
    s.model = c.model;
    s.env = c.env;
    s.caps = c.memory;
    s.appearance = AppearanceTable::seeded(c.num_classes, c.model.appearance_dim, c.appearance_seed);
    if (c.zero_shot.enabled) {
        s.target_mode = TargetMode::similarity;
        s.class_embeddings = c.zero_shot.embedding_file.empty()
                                 ? synthetic_embeddings(c.num_classes, c.zero_shot.embedding_dim, c.appearance_seed)
                                 : load_embeddings(c.zero_shot.embedding_file, c.num_classes);
    }
    return s;
}

/// Everything needed to train and evaluate one configuration.
struct Experiment {
    RunConfig config;
    std::vector<FloorPlan> plans;
    TaskSplit split;
    AgentSetup setup;
    TaskSampler sampler;
    std::vector<bool> train_detectable;
    std::vector<EvalTask> suite;

    TrainOptions train_options() const {
        TrainOptions o;
        o.train = config.train;
        o.train.seed = config.seed;
        o.reward = config.reward;
        o.schedule = config.schedule;
        o.mask = RewardMask::from(config.model.toggles);
        o.detectable = train_detectable;
        return o;
    }

    EvalOptions eval_options() const {
        EvalOptions o;
        o.greedy = config.eval.greedy;
        o.random_policy = config.eval.random_policy;
        o.reward = config.reward;
        o.log_meta_rewards = config.eval.log_meta_rewards;
        o.mask = RewardMask::from(config.model.toggles);
        return o;
    }
};

inline Experiment build_experiment(const RunConfig& c, std::vector<FloorPlan> plans) {
    Experiment e;
    e.config = c;
    e.plans = std::move(plans);
    for (const auto& p : e.plans) {
        if (p.num_classes != static_cast<int>(c.num_classes)) {
            throw ConfigError("plan " + p.id + " has " + std::to_string(p.num_classes) + " classes, config expects " +
                              std::to_string(c.num_classes));
        }
    }
    e.split = resolve_split(c);
    e.setup = build_setup(c);
    const SplitUse tr = apply_split(e.split, Phase::train, c.num_classes);
    e.sampler.plans = plans_in(e.plans, Split::train);
    e.sampler.target_pool = tr.targets;
    e.train_detectable = tr.detectable;
    const SplitUse ev = apply_split(e.split, Phase::eval, c.num_classes, c.eval.targets);
    const auto eval_plans = plans_in(e.plans, c.eval.split);
    if (!eval_plans.empty()) e.suite = make_suite(eval_plans, ev.targets, c.eval.episodes, c.eval.seed);
    return e;
}

inline Experiment build_experiment(const RunConfig& c) { return build_experiment(c, build_plans(c)); }

}  // namespace mtnav
