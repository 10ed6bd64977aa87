// mtnav: generate plan suites, train, evaluate, ablate and export traces.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mtnav/mtnav.hpp"

namespace fs = std::filesystem;
using namespace mtnav;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> checkpoint;
    std::optional<std::size_t> workers;
    std::size_t episode = 0;
};

RunConfig resolved(const Flags& f) {
    RunConfig c = load_config(f.config);
    if (f.seed) c.seed = *f.seed;
    if (f.out) c.output_dir = *f.out;
    if (f.workers) c.train.workers = *f.workers;
    validate(c);
    return c;
}

void load_weights(SharedParamStore& store, const Flags& f) {
    if (!f.checkpoint) throw ConfigError("--checkpoint is required for this command");
    if (!fs::exists(*f.checkpoint)) throw IoError("checkpoint not found: " + *f.checkpoint);
    store.restore(load_checkpoint(*f.checkpoint));
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
}

int gen_maps(const Flags& f) {
    const RunConfig c = resolved(f);
    const fs::path out = c.output_dir;
    echo_config(c, out);
    const auto plans = build_plans(c);
    save_plans(out / "plans.txt", plans);
    std::cout << "wrote " << plans.size() << " plans to " << (out / "plans.txt").string() << '\n';
    return 0;
}

int train_cmd(const Flags& f) {
    const RunConfig c = resolved(f);
    const fs::path out = c.output_dir;
    echo_config(c, out);
    const Experiment e = build_experiment(c);
    SharedParamStore store(c.model, c.seed, c.train.adam);
    if (f.checkpoint) {
        store.restore(load_checkpoint(*f.checkpoint));
        std::cout << "resumed at episode " << store.episodes_completed() << '\n';
    }
    std::ofstream log_stream(out / "train_log.jsonl", std::ios::app);
    if (!log_stream) throw IoError("cannot write " + (out / "train_log.jsonl").string());
    TrainingLog log(&log_stream);
    TrainOptions opt = e.train_options();
    opt.log = &log;
    opt.checkpoint_dir = out / "checkpoints";
    if (opt.train.checkpoint_interval > 0) fs::create_directories(opt.checkpoint_dir);
    const TrainResult r = train(store, e.setup, e.sampler, opt);
    save_checkpoint(store.checkpoint(), out / "checkpoint.bin");
    std::cout << "trained " << r.episodes << " episodes, " << r.applied_batches << " batches (" << r.dropped_batches
              << " dropped) in " << r.seconds << " s\n"
              << "checkpoint: " << (out / "checkpoint.bin").string() << '\n';
    return 0;
}

int eval_cmd(const Flags& f) {
    const RunConfig c = resolved(f);
    const fs::path out = c.output_dir;
    const Experiment e = build_experiment(c);
    if (e.suite.empty()) throw ConfigError("no plans in evaluation split '" + std::string(split_name(c.eval.split)) + "'");
    SharedParamStore store(c.model, c.seed, c.train.adam);
    load_weights(store, f);
    echo_config(c, out);
    const EvalResult r = evaluate(store.model(), e.setup, e.suite, e.eval_options());
    std::ostringstream table;
    write_report(table, r.report);
    write_file(out / "report.txt", table.str());
    write_file(out / "report.json", report_json(r.report).dump(2) + "\n");
    export_traces(r.traces, out / "traces.jsonl");
    std::cout << table.str();
    if (r.skipped) std::cout << r.skipped << " episodes skipped (unreachable target)\n";
    return 0;
}

int ablate_cmd(const Flags& f) {
    const RunConfig c = resolved(f);
    const fs::path out = c.output_dir;
    echo_config(c, out);
    const Experiment e = build_experiment(c);
    if (e.suite.empty()) throw ConfigError("no plans in evaluation split '" + std::string(split_name(c.eval.split)) + "'");
    const auto variants = ablation_variants(c.model, c.schedule, c.ablation.toggles);
    AblationBase base{e.setup, e.sampler, e.train_options(), e.eval_options()};
    const auto rows = ablation_run(base, variants, e.suite, c.ablation.seeds, &std::cout);
    std::ostringstream table;
    write_ablation_table(table, rows);
    write_file(out / "ablation.txt", table.str());
    std::cout << table.str();
    return 0;
}

int trace_cmd(const Flags& f) {
    const RunConfig c = resolved(f);
    const fs::path out = c.output_dir;
    const Experiment e = build_experiment(c);
    if (f.episode >= e.suite.size()) {
        throw ConfigError("--episode " + std::to_string(f.episode) + " outside suite of " + std::to_string(e.suite.size()));
    }
    SharedParamStore store(c.model, c.seed, c.train.adam);
    load_weights(store, f);
    echo_config(c, out);
    auto tr = run_episode(store.model(), e.setup, e.suite[f.episode], e.eval_options(), f.episode);
    if (!tr) throw TaskError("target unreachable for episode " + std::to_string(f.episode));
    const fs::path path = out / ("trace-" + std::to_string(f.episode) + ".jsonl");
    export_traces({*tr}, path);
    std::cout << "episode " << f.episode << " (" << tr->plan_id << ", target " << tr->target << "): "
              << (tr->outcome.success ? "success" : "failure") << " in " << tr->steps.size() << " steps\n"
              << "trace: " << path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiple-thinking object navigation agent on a gridworld"};
    app.require_subcommand(1);
    Flags flags;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "JSON run configuration")->required();
        sub->add_option("--seed", flags.seed, "Override the run seed");
        sub->add_option("--out", flags.out, "Override the output directory");
        sub->add_option("--workers", flags.workers, "Override the training worker count");
        return sub;
    };
    auto* gen = add_common(app.add_subcommand("gen-maps", "Generate a floor-plan suite"));
    auto* tr = add_common(app.add_subcommand("train", "Train an agent"));
    tr->add_option("--checkpoint", flags.checkpoint, "Resume from a checkpoint");
    auto* ev = add_common(app.add_subcommand("eval", "Evaluate a checkpoint"));
    ev->add_option("--checkpoint", flags.checkpoint, "Checkpoint to evaluate")->required();
    auto* ab = add_common(app.add_subcommand("ablate", "Train and evaluate ablation variants"));
    auto* tc = add_common(app.add_subcommand("trace", "Export the full trace of one evaluation episode"));
    tc->add_option("--checkpoint", flags.checkpoint, "Checkpoint to run")->required();
    tc->add_option("--episode", flags.episode, "Index into the evaluation suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return gen_maps(flags);
        if (tr->parsed()) return train_cmd(flags);
        if (ev->parsed()) return eval_cmd(flags);
        if (ab->parsed()) return ablate_cmd(flags);
        if (tc->parsed()) return trace_cmd(flags);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
