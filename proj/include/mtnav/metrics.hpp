#pragma once
// Episode traces, SR/SPL and the meta-ability metrics, evaluation runs,
// the ablation harness and trace/report export.

#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtnav/agent.hpp"
#include "mtnav/env.hpp"
#include "mtnav/memory.hpp"
#include "mtnav/training.hpp"

namespace mtnav {

// ---------------------------------------------------------------------------
// Traces

/// One step: the pose and observation before the action, the action and what it produced.
struct TraceStep {
    AgentState pose;
    Action action = Action::done;
    RewardComponents reward;
    bool target_detected = false;  // in the observation taken at `pose`
    bool collided = false;
    std::array<double, kNumThinking> activation{};

    friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct EpisodeOutcome {
    bool success = false;
    double path_length = 0.0;     // L, metres
    double optimal_length = 0.0;  // L*, metres
    std::optional<std::size_t> first_visible_step;
    std::optional<double> optimal_nav_length;  // L*Nav, metres from the first target-visible pose
    AgentState final_pose;

    friend bool operator==(const EpisodeOutcome&, const EpisodeOutcome&) = default;
};

struct EpisodeTrace {
    std::uint64_t episode_id = 0;
    std::string plan_id;
    int target = 0;
    std::vector<TraceStep> steps;
    EpisodeOutcome outcome;

    friend bool operator==(const EpisodeTrace&, const EpisodeTrace&) = default;
};

inline bool moved(const TraceStep& s) { return s.action == Action::move_ahead && !s.collided; }

/// Path length in metres over steps [from, end).
inline double path_length(const std::vector<TraceStep>& steps, std::size_t from = 0) {
    std::size_t n = 0;
    for (std::size_t i = from; i < steps.size(); ++i) n += moved(steps[i]) ? 1 : 0;
    return static_cast<double>(n) * kCellMeters;
}

inline std::optional<std::size_t> first_visible(const std::vector<TraceStep>& steps) {
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (steps[i].target_detected) return i;
    return std::nullopt;
}

struct PhaseSplit {
    std::vector<TraceStep> search;
    std::vector<TraceStep> navigate;
    bool nav = false;
};

/// Boundary at the first target-visible step; that step opens the navigate segment.
inline PhaseSplit split_phases(const EpisodeTrace& trace) {
    PhaseSplit out;
    const auto fv = trace.outcome.first_visible_step;
    const std::size_t cut = fv ? *fv : trace.steps.size();
    out.search.assign(trace.steps.begin(), trace.steps.begin() + static_cast<std::ptrdiff_t>(cut));
    out.navigate.assign(trace.steps.begin() + static_cast<std::ptrdiff_t>(cut), trace.steps.end());
    out.nav = fv.has_value();
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Per-episode quantities entering the aggregate metrics.
struct EpisodeTerms {
    double success = 0.0;
    double spl = 0.0;
    double nav = 0.0;
    double nsnpl = 0.0;
    double rep = 0.0;
    double cp = 0.0;
    bool long_path = false;
};

/// Actions excluding Done count toward L_i in REP/CP; a repeat is an action whose
/// resulting pose was already occupied earlier in the episode (start pose included).
inline EpisodeTerms episode_terms(const EpisodeTrace& tr) {
    EpisodeTerms t;
    const auto& o = tr.outcome;
    t.success = o.success ? 1.0 : 0.0;
    const double denom = std::max(o.path_length, o.optimal_length);
    t.spl = t.success * (denom > 0.0 ? o.optimal_length / denom : 1.0);
    t.long_path = o.optimal_length / kCellMeters > 5.0;

    if (o.first_visible_step) {
        t.nav = 1.0;
        const double l_nav = path_length(tr.steps, *o.first_visible_step);
        const double l_star_nav = o.optimal_nav_length.value_or(0.0);
        const double d = std::max(l_nav, l_star_nav);
        t.nsnpl = t.success * (d > 0.0 ? l_star_nav / d : 1.0);
    }

    std::set<AgentState> seen;
    if (!tr.steps.empty()) seen.insert(tr.steps.front().pose);
    std::size_t actions = 0, repeats = 0, collisions = 0;
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        const auto& s = tr.steps[i];
        if (s.action == Action::done) continue;
        ++actions;
        collisions += s.collided ? 1 : 0;
        const AgentState& after = i + 1 < tr.steps.size() ? tr.steps[i + 1].pose : o.final_pose;
        if (!seen.insert(after).second) ++repeats;
    }
    if (actions > 0) {
        t.rep = static_cast<double>(repeats) / static_cast<double>(actions);
        t.cp = static_cast<double>(collisions) / static_cast<double>(actions);
    }
    return t;
}

/// Metrics in percent over one episode subset. NSNPL is absent when no episode saw the target.
struct SubsetMetrics {
    std::size_t episodes = 0;      // F
    std::size_t nav_episodes = 0;  // F_Nav
    double sr = 0.0;
    double spl = 0.0;
    double ssr = 0.0;
    std::optional<double> nsnpl;
    double rep = 0.0;
    double cp = 0.0;

    friend bool operator==(const SubsetMetrics&, const SubsetMetrics&) = default;
};

struct MetricsReport {
    SubsetMetrics all;
    SubsetMetrics long_paths;  // L* above 5 grid steps

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline SubsetMetrics aggregate(const std::vector<EpisodeTerms>& terms) {
    SubsetMetrics m;
    m.episodes = terms.size();
    if (terms.empty()) return m;
    double nsnpl = 0.0;
    for (const auto& t : terms) {
        m.sr += t.success;
        m.spl += t.spl;
        m.ssr += t.nav;
        m.rep += t.rep;
        m.cp += t.cp;
        if (t.nav > 0.0) {
            ++m.nav_episodes;
            nsnpl += t.nsnpl;
        }
    }
    const double f = static_cast<double>(m.episodes);
    m.sr = 100.0 * m.sr / f;
    m.spl = 100.0 * m.spl / f;
    m.ssr = 100.0 * m.ssr / f;
    m.rep = 100.0 * m.rep / f;
    m.cp = 100.0 * m.cp / f;
    if (m.nav_episodes > 0) m.nsnpl = 100.0 * nsnpl / static_cast<double>(m.nav_episodes);
    return m;
}

inline MetricsReport compute_metrics(const std::vector<EpisodeTrace>& traces) {
    std::vector<EpisodeTerms> all, longer;
    for (const auto& tr : traces) {
        const auto t = episode_terms(tr);
        all.push_back(t);
        if (t.long_path) longer.push_back(t);
    }
    return {aggregate(all), aggregate(longer)};
}

/// Per-target-class breakdown.
inline std::map<int, MetricsReport> metrics_by_class(const std::vector<EpisodeTrace>& traces) {
    std::map<int, std::vector<EpisodeTrace>> groups;
    for (const auto& tr : traces) groups[tr.target].push_back(tr);
    std::map<int, MetricsReport> out;
    for (const auto& [cls, group] : groups) out[cls] = compute_metrics(group);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalTask {
    std::shared_ptr<const FloorPlan> plan;
    int target = 0;
    std::uint64_t seed = 0;
};

/// `count` tasks: plan i mod |plans|, uniform target from `targets` present in it, seeded start.
inline std::vector<EvalTask> make_suite(const std::vector<std::shared_ptr<const FloorPlan>>& plans,
                                        const std::vector<int>& targets, std::size_t count, std::uint64_t seed) {
    if (plans.empty()) throw TaskError("evaluation suite needs at least one plan");
    std::vector<EvalTask> suite;
    RngStream rng(seed);
    for (std::size_t i = 0; suite.size() < count; ++i) {
        if (i > count * 50 + 1000) throw TaskError("no plan contains any requested target class");
        const auto& plan = plans[i % plans.size()];
        std::vector<int> present;
        for (int c : targets)
            if (plan->has_class(c)) present.push_back(c);
        if (present.empty()) continue;
        suite.push_back({plan, present[rng.below(present.size())], rng.next_u64()});
    }
    return suite;
}

struct EvalOptions {
    bool greedy = true;
    bool random_policy = false;  // uniform actions, the model is not consulted
    std::vector<bool> detectable;  // empty = all classes detectable
    RewardConfig reward;
    bool log_meta_rewards = true;  // trace records include meta-ability reward components
    RewardMask mask;
};

struct EvalResult {
    MetricsReport report;
    std::vector<EpisodeTrace> traces;
    std::size_t skipped = 0;
};

/// Runs one evaluation episode; nullopt when the target is unreachable from the start cell.
inline std::optional<EpisodeTrace> run_episode(const MtModel& model, const AgentSetup& setup, const EvalTask& task,
                                               const EvalOptions& opt, std::uint64_t episode_id = 0) {
    EnvConfig env_cfg = setup.env;
    env_cfg.mode = Mode::eval;
    NavEnv env(env_cfg);
    env.set_detectable(opt.detectable);
    RngStream start_rng(task.seed);
    RngStream act_rng = start_rng.fork(1);
    auto [state, obs] = env.reset(task.plan, task.target, start_rng);

    EpisodeTrace tr;
    tr.episode_id = episode_id;
    tr.plan_id = task.plan->id;
    tr.target = task.target;
    const auto l_star = shortest_path_length(*task.plan, state.cell, task.target, env_cfg.view.success_distance_m);
    if (!l_star) return std::nullopt;
    tr.outcome.optimal_length = *l_star;

    NoGradScope no_grad;
    const TargetCode code = setup.code_for(task.target);
    EpisodeMemory memory;
    memory.caps = setup.caps;
    update_memories(obs, state, task.target, memory);
    LstmState lstm = model.initial_state();
    RewardTracker tracker;
    tracker.reset(state, task.target, obs.detects(task.target), env.geodesic_cells());
    bool success = false;
    while (!env.over()) {
        Action a;
        std::optional<PolicyOutput> out;
        if (opt.random_policy) {
            a = static_cast<Action>(act_rng.below(kNumActions));
        } else {
            out = model.forward(build_inputs(obs, state, task.target, memory, setup.appearance), code, lstm, Mode::eval, act_rng);
            const auto logits = out->logits.data();
            a = static_cast<Action>(opt.greedy ? argmax(logits) : sample_categorical(softmax_values(logits), act_rng));
        }
        auto [next, result] = env.step(a);
        TraceStep rec;
        rec.pose = state;
        rec.action = a;
        rec.reward = tracker.step(state, a, next, result, env.geodesic_cells(), opt.reward, opt.log_meta_rewards, opt.mask);
        rec.target_detected = obs.detects(task.target);
        rec.collided = result.collided;
        if (out) rec.activation = activation_means(out->thinking);
        tr.steps.push_back(rec);
        if (a == Action::done) success = result.done_valid;
        update_memories(result, next, task.target, memory);
        state = next;
        obs = std::move(result);
        if (out) lstm = out->state;
    }
    tr.outcome.success = success;
    tr.outcome.final_pose = state;
    tr.outcome.path_length = path_length(tr.steps);
    tr.outcome.first_visible_step = first_visible(tr.steps);
    if (tr.outcome.first_visible_step) {
        tr.outcome.optimal_nav_length = shortest_path_length(
            *task.plan, tr.steps[*tr.outcome.first_visible_step].pose.cell, task.target, env_cfg.view.success_distance_m);
    }
    return tr;
}

inline EvalResult evaluate(const MtModel& model, const AgentSetup& setup, const std::vector<EvalTask>& suite,
                           const EvalOptions& opt = {}) {
    if (suite.empty()) throw ContractError("evaluate: empty suite");
    EvalResult res;
    for (std::size_t i = 0; i < suite.size(); ++i) {
        auto tr = run_episode(model, setup, suite[i], opt, i);
        if (!tr) {
            std::cerr << "warning: skipping episode " << i << ": target " << suite[i].target << " unreachable in plan "
                      << suite[i].plan->id << '\n';
            ++res.skipped;
            continue;
        }
        res.traces.push_back(std::move(*tr));
    }
    res.report = compute_metrics(res.traces);
    return res;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
    std::string name;
    ModelConfig model;
    RewardSchedule schedule = RewardSchedule::first_c;
    RewardMask mask;
};

/// Applies one toggle expression ("no_search", "no_mtc+no_obstacle", "it_only", ...) to a base variant.
inline AblationVariant apply_toggle(AblationVariant v, const std::string& expr) {
    v.name = expr;
    std::stringstream ss(expr);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        bool known = false;
        for (std::size_t i = 0; i < kNumThinking; ++i) {
            if (tok == std::string("no_") + kThinkingNames[i]) {
                v.model.toggles.enabled[i] = false;
                known = true;
            }
        }
        if (tok == "no_mtc") v.model.toggles.mtc = false;
        else if (tok == "no_meta_reward") v.schedule = RewardSchedule::never;
        else if (tok == "meta_reward_all") v.schedule = RewardSchedule::all_episodes;
        else if (tok == "it_only") {
            v.model.toggles.enabled = {true, false, false, false, false};
            v.model.toggles.mtc = false;
            v.schedule = RewardSchedule::never;
        } else if (!known) {
            throw ConfigError("unknown ablation toggle '" + tok + "'");
        }
    }
    validate(v.model);
    v.mask = RewardMask::from(v.model.toggles);
    return v;
}

/// Base variant followed by one variant per toggle expression.
inline std::vector<AblationVariant> ablation_variants(const ModelConfig& base, RewardSchedule schedule,
                                                      const std::vector<std::string>& toggles) {
    validate(base);
    AblationVariant b{"base", base, schedule, RewardMask::from(base.toggles)};
    std::vector<AblationVariant> out{b};
    for (const auto& t : toggles) out.push_back(apply_toggle(b, t));
    return out;
}

struct AblationRow {
    std::string variant;
    std::optional<std::uint64_t> seed;  // absent on the per-variant mean row
    MetricsReport report;
};

inline SubsetMetrics mean_metrics(const std::vector<SubsetMetrics>& xs) {
    SubsetMetrics m;
    if (xs.empty()) return m;
    double nsnpl = 0.0;
    std::size_t with_nav = 0;
    for (const auto& x : xs) {
        m.episodes += x.episodes;
        m.nav_episodes += x.nav_episodes;
        m.sr += x.sr;
        m.spl += x.spl;
        m.ssr += x.ssr;
        m.rep += x.rep;
        m.cp += x.cp;
        if (x.nsnpl) {
            nsnpl += *x.nsnpl;
            ++with_nav;
        }
    }
    const double n = static_cast<double>(xs.size());
    m.sr /= n;
    m.spl /= n;
    m.ssr /= n;
    m.rep /= n;
    m.cp /= n;
    if (with_nav > 0) m.nsnpl = nsnpl / static_cast<double>(with_nav);
    return m;
}

/// Everything a single variant run needs besides the variant itself.
struct AblationBase {
    AgentSetup setup;
    TaskSampler sampler;
    TrainOptions options;
    EvalOptions eval;
};

/// Trains every variant from scratch for every seed, evaluates on `suite` and returns
/// rows grouped by variant: one per seed, then the mean row.
inline std::vector<AblationRow> ablation_run(const AblationBase& base, const std::vector<AblationVariant>& variants,
                                             const std::vector<EvalTask>& suite, const std::vector<std::uint64_t>& seeds,
                                             std::ostream* progress = nullptr) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        std::vector<SubsetMetrics> alls, longs;
        for (std::uint64_t seed : seeds) {
            AgentSetup setup = base.setup;
            setup.model = v.model;
            TrainOptions opt = base.options;
            opt.train.seed = seed;
            opt.schedule = v.schedule;
            opt.mask = v.mask;
            SharedParamStore store(setup.model, seed, opt.train.adam);
            const auto tr = train(store, setup, base.sampler, opt);
            EvalOptions eo = base.eval;
            eo.mask = v.mask;
            const auto res = evaluate(store.model(), setup, suite, eo);
            if (progress) {
                *progress << v.name << " seed " << seed << ": SR " << res.report.all.sr << " (" << tr.seconds << " s)\n";
            }
            rows.push_back({v.name, seed, res.report});
            alls.push_back(res.report.all);
            longs.push_back(res.report.long_paths);
        }
        rows.push_back({v.name, std::nullopt, {mean_metrics(alls), mean_metrics(longs)}});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json pose_json(const AgentState& s) { return {s.cell.x, s.cell.y, s.heading, s.pitch}; }
inline AgentState pose_from_json(const nlohmann::json& j) {
    AgentState s;
    s.cell = {j.at(0).get<int>(), j.at(1).get<int>()};
    s.heading = j.at(2).get<int>();
    s.pitch = j.at(3).get<int>();
    return s;
}

inline Action parse_action(const std::string& name) {
    for (std::size_t i = 0; i < kNumActions; ++i)
        if (name == action_name(static_cast<Action>(i))) return static_cast<Action>(i);
    throw IoError("unknown action name '" + name + "'");
}

/// Trace stream: per episode one header record, then one record per step.
inline void write_traces(std::ostream& os, const std::vector<EpisodeTrace>& traces) {
    for (const auto& tr : traces) {
        const auto& o = tr.outcome;
        nlohmann::json h = {{"record", "episode"},
                            {"episode_id", tr.episode_id},
                            {"plan_id", tr.plan_id},
                            {"target", tr.target},
                            {"steps", tr.steps.size()},
                            {"success", o.success},
                            {"L", o.path_length},
                            {"L_star", o.optimal_length},
                            {"first_visible_step", o.first_visible_step ? nlohmann::json(*o.first_visible_step) : nlohmann::json()},
                            {"L_star_nav", o.optimal_nav_length ? nlohmann::json(*o.optimal_nav_length) : nlohmann::json()},
                            {"final_pose", pose_json(o.final_pose)}};
        os << h.dump() << '\n';
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            const auto& s = tr.steps[t];
            nlohmann::json r = {{"record", "step"},
                                {"episode_id", tr.episode_id},
                                {"t", t},
                                {"pose", pose_json(s.pose)},
                                {"action", action_name(s.action)},
                                {"reward", s.reward.as_array()},
                                {"reward_total", s.reward.total()},
                                {"target_detected", s.target_detected},
                                {"collided", s.collided},
                                {"activation", s.activation}};
            os << r.dump() << '\n';
        }
    }
}

inline std::vector<EpisodeTrace> read_traces(std::istream& is) {
    std::vector<EpisodeTrace> out;
    std::string line;
    std::size_t expected = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const auto kind = j.at("record").get<std::string>();
        if (kind == "episode") {
            if (expected != 0) throw IoError("trace stream: episode header before previous episode's steps ended");
            EpisodeTrace tr;
            tr.episode_id = j.at("episode_id").get<std::uint64_t>();
            tr.plan_id = j.at("plan_id").get<std::string>();
            tr.target = j.at("target").get<int>();
            auto& o = tr.outcome;
            o.success = j.at("success").get<bool>();
            o.path_length = j.at("L").get<double>();
            o.optimal_length = j.at("L_star").get<double>();
            if (!j.at("first_visible_step").is_null()) o.first_visible_step = j.at("first_visible_step").get<std::size_t>();
            if (!j.at("L_star_nav").is_null()) o.optimal_nav_length = j.at("L_star_nav").get<double>();
            o.final_pose = pose_from_json(j.at("final_pose"));
            expected = j.at("steps").get<std::size_t>();
            out.push_back(std::move(tr));
        } else if (kind == "step") {
            if (out.empty() || expected == 0) throw IoError("trace stream: step record without an open episode");
            TraceStep s;
            s.pose = pose_from_json(j.at("pose"));
            s.action = parse_action(j.at("action").get<std::string>());
            const auto r = j.at("reward").get<std::array<double, kNumRewardComponents>>();
            s.reward = {r[0], r[1], r[2], r[3], r[4], r[5], r[6]};
            s.target_detected = j.at("target_detected").get<bool>();
            s.collided = j.at("collided").get<bool>();
            s.activation = j.at("activation").get<std::array<double, kNumThinking>>();
            out.back().steps.push_back(s);
            --expected;
        } else {
            throw IoError("trace stream: unknown record kind '" + kind + "'");
        }
    }
    if (expected != 0) throw IoError("trace stream truncated");
    return out;
}

inline void export_traces(const std::vector<EpisodeTrace>& traces, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write traces to " + path.string());
    write_traces(os, traces);
    if (!os) throw IoError("write failed for " + path.string());
}

inline std::vector<EpisodeTrace> import_traces(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read traces from " + path.string());
    return read_traces(is);
}

inline std::string format_metric(std::optional<double> v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}

inline constexpr std::array<const char*, 6> kMetricNames = {"SR", "SPL", "SSR", "NSNPL", "REP", "CP"};

inline std::array<std::optional<double>, 6> metric_values(const SubsetMetrics& m) {
    if (m.episodes == 0) return {};
    return {m.sr, m.spl, m.ssr, m.nsnpl, m.rep, m.cp};
}

/// Fixed-width table: rows ALL and L>=5, columns SR SPL SSR NSNPL REP CP F F_Nav.
inline void write_report(std::ostream& os, const MetricsReport& r, const std::string& label = "") {
    if (!label.empty()) os << "# " << label << '\n';
    os << std::left << std::setw(8) << "subset";
    for (const char* n : kMetricNames) os << std::right << std::setw(9) << n;
    os << std::setw(7) << "F" << std::setw(7) << "F_Nav" << '\n';
    auto row = [&](const char* name, const SubsetMetrics& m) {
        os << std::left << std::setw(8) << name;
        for (const auto& v : metric_values(m)) os << std::right << std::setw(9) << format_metric(v);
        os << std::setw(7) << m.episodes << std::setw(7) << m.nav_episodes << '\n';
    };
    row("ALL", r.all);
    row("L>=5", r.long_paths);
}

inline nlohmann::json subset_json(const SubsetMetrics& m) {
    nlohmann::json j = {{"F", m.episodes}, {"F_Nav", m.nav_episodes}};
    const auto vals = metric_values(m);
    for (std::size_t i = 0; i < vals.size(); ++i) j[kMetricNames[i]] = vals[i] ? nlohmann::json(*vals[i]) : nlohmann::json("n/a");
    return j;
}

inline nlohmann::json report_json(const MetricsReport& r) {
    return {{"ALL", subset_json(r.all)}, {"L>=5", subset_json(r.long_paths)}};
}

inline void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << std::left << std::setw(40) << "variant" << std::setw(8) << "seed";
    for (const char* n : kMetricNames) os << std::right << std::setw(9) << n;
    os << '\n';
    for (const auto& r : rows) {
        os << std::left << std::setw(40) << r.variant << std::setw(8) << (r.seed ? std::to_string(*r.seed) : "mean");
        for (const auto& v : metric_values(r.report.all)) os << std::right << std::setw(9) << format_metric(v);
        os << '\n';
    }
}

}  // namespace mtnav
