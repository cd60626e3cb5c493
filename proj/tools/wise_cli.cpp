#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "wise/checkpoint.hpp"
#include "wise/errors.hpp"
#include "wise/harness.hpp"

namespace {

using namespace wise;

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string sibling(const std::string& path, const std::string& suffix) {
    std::filesystem::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void print_report(const MetricsReport& r) {
    std::cout << (r.label.empty() ? "run" : r.label) << " T=" << r.t_edits << " rel=" << format_number(r.rel)
              << " gen=" << format_number(r.gen) << " loc=" << format_number(r.loc)
              << " avg=" << format_number(r.avg) << " ppl_loc=" << format_number(r.ppl_loc) << '\n';
}

int cmd_pretrain(const std::string& config, const std::string& out) {
    ExperimentConfig cfg = load_experiment_config(config);
    const Dataset data = experiment_dataset(cfg);
    TinyTransformer model = init_model(cfg.model, cfg.seed);
    const TrainingLog log = pretrain(model, encode_lines(data.corpus), cfg.pretrain);
    Checkpoint ckpt{model, {}, nlohmann::json::object()};
    ckpt.meta["initial_loss"] = log.initial_loss;
    ckpt.meta["final_loss"] = log.final_loss;
    save_checkpoint(ckpt, out);
    std::cout << "pretrained " << cfg.pretrain.steps << " steps: loss " << format_number(log.initial_loss)
              << " -> " << format_number(log.final_loss) << '\n';
    return 0;
}

int cmd_gen_data(std::uint64_t seed, std::size_t n, std::size_t background, std::size_t heldout,
                 const std::string& out) {
    DataConfig cfg;
    cfg.seed = seed;
    cfg.n_facts = n;
    cfg.n_background = background;
    cfg.n_heldout = heldout;
    save_dataset(gen_dataset(cfg), out);
    std::cout << "wrote " << n << " edits to " << out << '\n';
    return 0;
}

int cmd_edit(const std::string& config, const std::string& stream_path, const std::string& mode,
             const std::string& out) {
    ExperimentConfig cfg = load_experiment_config(config);
    cfg.mode = parse_edit_mode(mode);
    const Dataset data = experiment_dataset(cfg);
    const TinyTransformer model = pretrained_model(cfg, data);
    const EditStream stream = load_stream(stream_path);
    if (stream.examples.empty()) throw InputError(stream_path + ": empty stream");
    const StreamResult sr = run_stream(model, stream.examples, cfg.edit, cfg.merge, cfg.mode,
                                       encode_lines(data.irrelevant), cfg.seed);
    Checkpoint ckpt{model, sr.memories, nlohmann::json::object()};
    ckpt.meta["experiment"] = cfg.to_json();
    save_checkpoint(ckpt, out);
    write_edit_log(sr.log, sr.merge_events, sibling(out, ".edit_log.jsonl"));
    std::cout << "edited " << stream.examples.size() << " facts into " << sr.memories.size()
              << " side memor" << (sr.memories.size() == 1 ? "y" : "ies") << " (" << sr.merge_events.size()
              << " merges)\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& stream_path, const std::string& report) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const EditStream stream = load_stream(stream_path);
    EvalOptions opts;
    if (ckpt.meta.contains("experiment")) {
        opts.aggregation = ExperimentConfig::from_json(ckpt.meta["experiment"]).edit.aggregation;
    }
    // The main memory is never edited, so the checkpoint's base model is the
    // pre-edit reference.
    MetricsReport r = evaluate(ckpt.model, ckpt.memories, stream.examples, opts);
    r.label = "eval";
    write_report({r}, report);
    write_histogram(activation_histogram(ckpt.model, ckpt.memories, stream.examples, {}, opts.aggregation),
                    sibling(report, ".hist.csv"));
    print_report(r);
    return 0;
}

int cmd_run(const std::string& config) {
    const ExperimentConfig cfg = load_experiment_config(config);
    const ExperimentResult result = run_experiment(cfg);
    for (const auto& r : result.reports) print_report(r);
    for (const auto& r : result.baseline_reports) print_report(r);
    return 0;
}

int cmd_sweep(const std::string& config, const std::string& grid_path, std::string out) {
    const ExperimentConfig cfg = load_experiment_config(config);
    std::ifstream in(grid_path);
    if (!in) throw IoError("cannot open grid " + grid_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(grid_path + ": " + e.what());
    }
    const SweepResult sweep = run_sweep(cfg, SweepGrid::from_json(j));
    if (out.empty()) out = cfg.out_dir.empty() ? "sweep.csv" : (std::filesystem::path(cfg.out_dir) / "sweep.csv").string();
    write_sweep(sweep, out);
    std::cout << "best rho=" << format_number(sweep.best_rho) << " k=" << sweep.best_k
              << " avg=" << format_number(sweep.best_avg) << '\n';
    return 0;
}

int cmd_merge_ablate(const std::string& config, const std::string& strategies, std::string out) {
    const ExperimentConfig cfg = load_experiment_config(config);
    std::vector<MergeStrategy> list;
    for (const auto& s : split_csv(strategies)) list.push_back(parse_merge_strategy(s));
    if (list.empty()) throw ConfigError("merge-ablate: no strategies given");
    const auto reports = run_merge_ablation(cfg, list);
    if (out.empty()) {
        out = cfg.out_dir.empty() ? "merge_ablation.csv"
                                  : (std::filesystem::path(cfg.out_dir) / "merge_ablation.csv").string();
    }
    write_report(reports, out);
    for (const auto& r : reports) print_report(r);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lifelong knowledge editing with side memories on a tiny transformer"};
    app.require_subcommand(1);

    std::string config, out, stream, mode = "merge", ckpt, report, grid, strategies = "ties,linear,sign";
    std::uint64_t seed = 0;
    std::size_t n = 100, background = 150, heldout = 50;

    auto* pre = app.add_subcommand("pretrain", "Pretrain the base model on the synthetic corpus");
    pre->add_option("--config", config, "Experiment config (JSON)")->required();
    pre->add_option("--out", out, "Output checkpoint")->required();

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic fact world and edit stream");
    gen->add_option("--seed", seed, "Random seed")->required();
    gen->add_option("--n", n, "Number of edits")->required();
    gen->add_option("--background", background, "Number of facts that are never edited");
    gen->add_option("--heldout", heldout, "Background facts kept out of the irrelevant pool");
    gen->add_option("--out", out, "Output directory")->required();

    auto* edit = app.add_subcommand("edit", "Apply an edit stream and save the edited checkpoint");
    edit->add_option("--config", config, "Experiment config (JSON)")->required();
    edit->add_option("--stream", stream, "Edit stream (JSONL)")->required();
    edit->add_option("--mode", mode, "merge or retrieve")->check(CLI::IsMember({"merge", "retrieve"}));
    edit->add_option("--out", out, "Output checkpoint")->required();

    auto* ev = app.add_subcommand("eval", "Score a checkpoint on a stream");
    ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
    ev->add_option("--stream", stream, "Edit stream (JSONL)")->required();
    ev->add_option("--report", report, "Report CSV path")->required();

    auto* run = app.add_subcommand("run", "Run a full experiment (pretrain, edit, evaluate, report)");
    run->add_option("--config", config, "Experiment config (JSON)")->required();

    auto* sw = app.add_subcommand("sweep", "Mask ratio / shard count sweep");
    sw->add_option("--config", config, "Experiment config (JSON)")->required();
    sw->add_option("--grid", grid, "Grid (JSON with rho, k, seeds)")->required();
    sw->add_option("--out", out, "Sweep CSV path");

    auto* ab = app.add_subcommand("merge-ablate", "Compare merge strategies on one stream");
    ab->add_option("--config", config, "Experiment config (JSON)")->required();
    ab->add_option("--strategies", strategies, "Comma-separated list of ties, linear, sign");
    ab->add_option("--out", out, "Report CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << " (see --help)\n";
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    }

    try {
        if (pre->parsed()) return cmd_pretrain(config, out);
        if (gen->parsed()) return cmd_gen_data(seed, n, background, heldout, out);
        if (edit->parsed()) return cmd_edit(config, stream, mode, out);
        if (ev->parsed()) return cmd_eval(ckpt, stream, report);
        if (run->parsed()) return cmd_run(config);
        if (sw->parsed()) return cmd_sweep(config, grid, out);
        if (ab->parsed()) return cmd_merge_ablate(config, strategies, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
