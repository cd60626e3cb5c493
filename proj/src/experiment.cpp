#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "wise/errors.hpp"
#include "wise/harness.hpp"

namespace wise {

namespace {

using Json = nlohmann::json;
using Handler = std::function<void(const Json&, const std::string&)>;

// Dispatches every key of `obj` to its handler; unknown keys are errors.
void parse_object(const Json& obj, const std::string& where, const std::map<std::string, Handler>& handlers) {
    if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        const std::string name = where.empty() ? key : where + "." + key;
        auto it = handlers.find(key);
        if (it == handlers.end()) throw ConfigError("unknown config key '" + name + "'");
        it->second(value, name);
    }
}

double as_real(const Json& v, const std::string& name) {
    if (!v.is_number()) throw ConfigError("config: '" + name + "' must be a number");
    return v.get<double>();
}

std::size_t as_count(const Json& v, const std::string& name) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError("config: '" + name + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

bool as_bool(const Json& v, const std::string& name) {
    if (!v.is_boolean()) throw ConfigError("config: '" + name + "' must be true or false");
    return v.get<bool>();
}

std::string as_string(const Json& v, const std::string& name) {
    if (!v.is_string()) throw ConfigError("config: '" + name + "' must be a string");
    return v.get<std::string>();
}

template <typename T>
Handler set_real(T& field) {
    return [&field](const Json& v, const std::string& n) { field = as_real(v, n); };
}
template <typename T>
Handler set_count(T& field) {
    return [&field](const Json& v, const std::string& n) { field = as_count(v, n); };
}
Handler set_bool(bool& field) {
    return [&field](const Json& v, const std::string& n) { field = as_bool(v, n); };
}
Handler set_string(std::string& field) {
    return [&field](const Json& v, const std::string& n) { field = as_string(v, n); };
}

Aggregation parse_aggregation(const std::string& s) {
    if (s == "mean") return Aggregation::Mean;
    if (s == "last_token") return Aggregation::LastToken;
    throw ConfigError("unknown aggregation '" + s + "' (expected mean or last_token)");
}

std::string aggregation_name(Aggregation a) { return a == Aggregation::Mean ? "mean" : "last_token"; }

std::string expand_seed(std::string path, std::uint64_t seed) {
    const std::string tag = "{seed}";
    for (auto pos = path.find(tag); pos != std::string::npos; pos = path.find(tag)) {
        path.replace(pos, tag.size(), std::to_string(seed));
    }
    return path;
}

// Everything that determines the pretrained weights.
Json pretrain_fingerprint(const ExperimentConfig& cfg) {
    Json j = cfg.to_json();
    return {{"seed", cfg.seed}, {"model", j["model"]}, {"pretrain", j["pretrain"]}, {"data", j["data"]},
            {"data_dir", cfg.data_dir}};
}

std::vector<EditExample> prefix(const std::vector<EditExample>& all, std::size_t n) {
    return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
}

LocalityReference prefix(const LocalityReference& ref, std::size_t n) {
    return {{ref.outputs.begin(), ref.outputs.begin() + static_cast<std::ptrdiff_t>(n)}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
    ExperimentConfig c;
    std::optional<std::uint64_t> data_seed;
    parse_object(
        j, "",
        {{"seed", set_count(c.seed)},
         {"model",
          [&](const Json& v, const std::string& n) {
              if (!v.is_object()) throw ConfigError("config: '" + n + "' must be an object");
              c.model = model_config_from_json(v);
          }},
         {"pretrain",
          [&](const Json& v, const std::string& n) {
              parse_object(v, n,
                           {{"steps", set_count(c.pretrain.steps)},
                            {"lr", set_real(c.pretrain.lr)},
                            {"batch_size", set_count(c.pretrain.batch_size)},
                            {"clip_norm", set_real(c.pretrain.clip_norm)},
                            {"log_every", set_count(c.pretrain.log_every)}});
          }},
         {"data",
          [&](const Json& v, const std::string& n) {
              parse_object(v, n,
                           {{"seed", [&](const Json& s, const std::string& sn) { data_seed = as_count(s, sn); }},
                            {"n_facts", set_count(c.data.n_facts)},
                            {"n_background", set_count(c.data.n_background)},
                            {"n_heldout", set_count(c.data.n_heldout)},
                            {"n_filler", set_count(c.data.n_filler)},
                            {"n_heldout_filler", set_count(c.data.n_heldout_filler)},
                            {"dir", set_string(c.data_dir)}});
          }},
         {"pretrained_ckpt", set_string(c.pretrained_ckpt)},
         {"edit",
          [&](const Json& v, const std::string& n) {
              EditConfig& e = c.edit;
              parse_object(v, n,
                           {{"alpha", set_real(e.alpha)},
                            {"beta", set_real(e.beta)},
                            {"gamma", set_real(e.gamma)},
                            {"lr", set_real(e.lr)},
                            {"steps_per_edit", set_count(e.steps_per_edit)},
                            {"edits_per_shard", set_count(e.edits_per_shard)},
                            {"k", set_count(e.k)},
                            {"rho", set_real(e.rho)},
                            {"n_prefixes", set_count(e.n_prefixes)},
                            {"prefix_len", set_count(e.prefix_len)},
                            {"irrelevant_batch", set_count(e.irrelevant_batch)},
                            {"margin_weight", set_real(e.margin_weight)},
                            {"use_memo_loss", set_bool(e.use_memo_loss)},
                            {"memo_batch", set_count(e.memo_batch)},
                            {"early_stop_loss", set_real(e.early_stop_loss)},
                            {"aggregation",
                             [&](const Json& a, const std::string& an) {
                                 e.aggregation = parse_aggregation(as_string(a, an));
                             }},
                            {"recompute_epsilon_after_merge", set_bool(e.recompute_epsilon_after_merge)}});
          }},
         {"merge",
          [&](const Json& v, const std::string& n) {
              parse_object(v, n,
                           {{"strategy",
                             [&](const Json& s, const std::string& sn) {
                                 c.merge.strategy = parse_merge_strategy(as_string(s, sn));
                             }},
                            {"trim_keep_ratio", set_real(c.merge.trim_keep_ratio)},
                            {"weights",
                             [&](const Json& w, const std::string& wn) {
                                 if (!w.is_array()) throw ConfigError("config: '" + wn + "' must be an array");
                                 c.merge.weights.clear();
                                 for (const auto& x : w) c.merge.weights.push_back(as_real(x, wn));
                             }},
                            {"scale", set_real(c.merge.scale)}});
          }},
         {"mode", [&](const Json& v, const std::string& n) { c.mode = parse_edit_mode(as_string(v, n)); }},
         {"checkpoints",
          [&](const Json& v, const std::string& n) {
              if (!v.is_array() || v.empty()) throw ConfigError("config: '" + n + "' must be a non-empty array");
              c.checkpoints.clear();
              for (const auto& x : v) c.checkpoints.push_back(as_count(x, n));
          }},
         {"baseline",
          [&](const Json& v, const std::string& n) {
              parse_object(v, n,
                           {{"enabled", set_bool(c.run_baseline)},
                            {"lr", set_real(c.baseline.lr)},
                            {"steps", set_count(c.baseline.steps)}});
          }},
         {"record_wall_time", set_bool(c.record_wall_time)},
         {"out_dir", set_string(c.out_dir)}});

    c.data.seed = data_seed.value_or(c.seed);
    c.pretrain.seed = c.seed;
    c.edit.validate();
    for (std::size_t t : c.checkpoints) {
        if (t == 0) throw ConfigError("config: checkpoints must be >= 1");
    }
    std::sort(c.checkpoints.begin(), c.checkpoints.end());
    c.checkpoints.erase(std::unique(c.checkpoints.begin(), c.checkpoints.end()), c.checkpoints.end());
    return c;
}

Json ExperimentConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["model"] = model_config_to_json(model);
    j["pretrain"] = {{"steps", pretrain.steps},
                     {"lr", pretrain.lr},
                     {"batch_size", pretrain.batch_size},
                     {"clip_norm", pretrain.clip_norm},
                     {"log_every", pretrain.log_every}};
    j["data"] = {{"seed", data.seed},
                 {"n_facts", data.n_facts},
                 {"n_background", data.n_background},
                 {"n_heldout", data.n_heldout},
                 {"n_filler", data.n_filler},
                 {"n_heldout_filler", data.n_heldout_filler},
                 {"dir", data_dir}};
    j["pretrained_ckpt"] = pretrained_ckpt;
    j["edit"] = {{"alpha", edit.alpha},
                 {"beta", edit.beta},
                 {"gamma", edit.gamma},
                 {"lr", edit.lr},
                 {"steps_per_edit", edit.steps_per_edit},
                 {"edits_per_shard", edit.edits_per_shard},
                 {"k", edit.k},
                 {"rho", edit.rho},
                 {"n_prefixes", edit.n_prefixes},
                 {"prefix_len", edit.prefix_len},
                 {"irrelevant_batch", edit.irrelevant_batch},
                 {"margin_weight", edit.margin_weight},
                 {"use_memo_loss", edit.use_memo_loss},
                 {"memo_batch", edit.memo_batch},
                 {"early_stop_loss", edit.early_stop_loss},
                 {"aggregation", aggregation_name(edit.aggregation)},
                 {"recompute_epsilon_after_merge", edit.recompute_epsilon_after_merge}};
    j["merge"] = {{"strategy", to_string(merge.strategy)},
                  {"trim_keep_ratio", merge.trim_keep_ratio},
                  {"weights", merge.weights},
                  {"scale", merge.scale}};
    j["mode"] = to_string(mode);
    j["checkpoints"] = checkpoints;
    j["baseline"] = {{"enabled", run_baseline}, {"lr", baseline.lr}, {"steps", baseline.steps}};
    j["record_wall_time"] = record_wall_time;
    j["out_dir"] = out_dir;
    return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

Dataset experiment_dataset(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) return load_dataset(expand_seed(cfg.data_dir, cfg.seed));
    return gen_dataset(cfg.data);
}

TinyTransformer pretrained_model(const ExperimentConfig& cfg, const Dataset& data) {
    const std::string path = expand_seed(cfg.pretrained_ckpt, cfg.seed);
    const Json fingerprint = pretrain_fingerprint(cfg);
    if (!path.empty() && std::filesystem::exists(path)) {
        Checkpoint ckpt = load_checkpoint(path);
        if (ckpt.meta.value("pretrain_fingerprint", Json()) == fingerprint) return std::move(ckpt.model);
    }
    TinyTransformer model = init_model(cfg.model, cfg.seed);
    PretrainOptions opts = cfg.pretrain;
    opts.seed = cfg.seed;
    const TrainingLog log = pretrain(model, encode_lines(data.corpus), opts);
    if (!path.empty()) {
        const auto parent = std::filesystem::path(path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        Checkpoint ckpt{model, {}, Json::object()};
        ckpt.meta["pretrain_fingerprint"] = fingerprint;
        ckpt.meta["initial_loss"] = log.initial_loss;
        ckpt.meta["final_loss"] = log.final_loss;
        save_checkpoint(ckpt, path);
    }
    return model;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    const Dataset data = experiment_dataset(cfg);
    const TinyTransformer model = pretrained_model(cfg, data);
    const auto& stream = data.stream.examples;
    if (stream.empty()) throw ConfigError("experiment: empty edit stream");
    if (cfg.checkpoints.back() > stream.size()) {
        throw ConfigError("experiment: checkpoint T=" + std::to_string(cfg.checkpoints.back()) +
                          " exceeds stream length " + std::to_string(stream.size()));
    }
    const std::vector<Tokens> pool = encode_lines(data.irrelevant);
    const LocalityReference ref = locality_reference(model, stream);
    const EvalOptions eval_opts{cfg.edit.aggregation};

    ExperimentResult result;
    for (std::size_t t : cfg.checkpoints) {
        const auto examples = prefix(stream, t);
        const auto t0 = std::chrono::steady_clock::now();
        StreamResult sr = run_stream(model, examples, cfg.edit, cfg.merge, cfg.mode, pool, cfg.seed);
        MetricsReport r = evaluate(model, sr.memories, examples, prefix(ref, t), eval_opts);
        r.wall_time = cfg.record_wall_time ? seconds_since(t0) : 0.0;
        r.label = "wise-" + to_string(cfg.mode);
        result.reports.push_back(r);
        if (cfg.run_baseline) {
            const auto b0 = std::chrono::steady_clock::now();
            BaselineResult b = baseline_ft(model, examples, cfg.baseline, prefix(ref, t));
            b.report.wall_time = cfg.record_wall_time ? seconds_since(b0) : 0.0;
            result.baseline_reports.push_back(b.report);
        }
        if (t == cfg.checkpoints.back()) result.final_stream = std::move(sr);
    }

    const auto examples = prefix(stream, cfg.checkpoints.back());
    const std::vector<Tokens> held = encode_lines(data.heldout.empty() ? data.irrelevant : data.heldout);
    result.histogram = activation_histogram(model, result.final_stream.memories, examples, held,
                                            cfg.edit.aggregation);

    if (!cfg.out_dir.empty()) {
        const std::filesystem::path dir(cfg.out_dir);
        std::filesystem::create_directories(dir);
        write_report(result.reports, (dir / "report.csv").string());
        if (cfg.run_baseline) write_report(result.baseline_reports, (dir / "baseline.csv").string());
        write_edit_log(result.final_stream.log, result.final_stream.merge_events,
                       (dir / "edit_log.jsonl").string());
        write_histogram(result.histogram, (dir / "histogram.csv").string());
        Checkpoint ckpt{model, result.final_stream.memories, Json::object()};
        ckpt.meta["experiment"] = cfg.to_json();
        save_checkpoint(ckpt, (dir / "final.ckpt").string());
    }
    return result;
}

ExperimentResult run_experiment(const std::string& config_path) {
    return run_experiment(load_experiment_config(config_path));
}

SweepGrid SweepGrid::from_json(const Json& j) {
    SweepGrid g;
    parse_object(j, "grid",
                 {{"rho",
                   [&](const Json& v, const std::string& n) {
                       if (!v.is_array() || v.empty()) throw ConfigError("config: '" + n + "' must be a non-empty array");
                       g.rho.clear();
                       for (const auto& x : v) g.rho.push_back(as_real(x, n));
                   }},
                  {"k",
                   [&](const Json& v, const std::string& n) {
                       if (!v.is_array() || v.empty()) throw ConfigError("config: '" + n + "' must be a non-empty array");
                       g.k.clear();
                       for (const auto& x : v) g.k.push_back(as_count(x, n));
                   }},
                  {"seeds", [&](const Json& v, const std::string& n) {
                       if (!v.is_array() || v.empty()) throw ConfigError("config: '" + n + "' must be a non-empty array");
                       g.seeds.clear();
                       for (const auto& x : v) g.seeds.push_back(as_count(x, n));
                   }}});
    return g;
}

SweepResult run_sweep(const ExperimentConfig& base, const SweepGrid& grid) {
    SweepResult out;
    double best = -1.0;
    for (std::size_t k : grid.k) {
        for (double rho : grid.rho) {
            double sum = 0.0;
            for (std::uint64_t seed : grid.seeds) {
                ExperimentConfig cfg = base;
                cfg.seed = seed;
                cfg.pretrain.seed = seed;
                if (cfg.data.seed == base.seed) cfg.data.seed = seed;
                cfg.edit.k = k;
                cfg.edit.rho = rho;
                cfg.checkpoints = {base.checkpoints.back()};
                cfg.run_baseline = false;
                cfg.out_dir.clear();
                ExperimentResult r = run_experiment(cfg);
                out.cells.push_back({rho, k, seed, r.reports.back()});
                sum += r.reports.back().avg;
            }
            const double mean = sum / static_cast<double>(grid.seeds.size());
            if (mean > best) {
                best = mean;
                out.best_rho = rho;
                out.best_k = k;
                out.best_avg = mean;
            }
        }
    }
    return out;
}

std::vector<MetricsReport> run_merge_ablation(const ExperimentConfig& base,
                                              const std::vector<MergeStrategy>& strategies) {
    std::vector<MetricsReport> out;
    for (MergeStrategy s : strategies) {
        ExperimentConfig cfg = base;
        cfg.merge.strategy = s;
        cfg.merge.weights.clear();
        cfg.checkpoints = {base.checkpoints.back()};
        cfg.run_baseline = false;
        cfg.out_dir.clear();
        MetricsReport r = run_experiment(cfg).reports.back();
        r.label = to_string(s);
        out.push_back(r);
    }
    return out;
}

}  // namespace wise
