#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wise/checkpoint.hpp"
#include "wise/editor.hpp"
#include "wise/merge.hpp"
#include "wise/model.hpp"
#include "wise/side_memory.hpp"

namespace wise {

// ---------------------------------------------------------------------------
// Data

struct EditStream {
    std::vector<EditExample> examples;
    std::string corpus_ref;  // path of the corpus used for irrelevant sampling, if any
};

// Synthetic fact world. Every fact is rendered through a prompt template and
// a paraphrase template; the corpus teaches the original object of every fact
// while the stream asks for a different one.
struct Dataset {
    EditStream stream;
    std::vector<std::string> corpus;      // pretraining text, one sentence per line
    std::vector<std::string> irrelevant;  // lines mentioning no edited subject
    std::vector<std::string> heldout;     // lines never sampled as irrelevant during editing
    std::vector<std::string> original_targets;  // pre-edit answer for each stream example
};

struct DataConfig {
    std::uint64_t seed = 0;
    std::size_t n_facts = 100;
    std::size_t n_background = 150;  // facts that are never edited
    std::size_t n_heldout = 50;      // background facts kept out of the irrelevant pool
    std::size_t n_filler = 400;      // generic sentences from a small grammar
    std::size_t n_heldout_filler = 100;  // filler kept out of the pool; locality probes come from here
};

Dataset gen_dataset(const DataConfig& cfg);

// Writes stream.jsonl, corpus.txt, irrelevant.txt, heldout.txt and
// original.txt into `dir` (created if missing).
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

EditStream load_stream(const std::string& path);
void save_stream(const EditStream& stream, const std::string& path);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::vector<std::string>& lines, const std::string& path);
std::vector<Tokens> encode_lines(const std::vector<std::string>& lines);

// ---------------------------------------------------------------------------
// Evaluation

struct MetricsReport {
    std::size_t t_edits = 0;
    double rel = 0.0;
    double gen = 0.0;
    double loc = 1.0;
    double avg = 0.0;
    double ppl_loc = 1.0;
    double wall_time = 0.0;  // seconds
    std::size_t n_paraphrases = 0;
    double rel_tokens = 0.0;  // per-token partial scores, logged only
    double gen_tokens = 0.0;
    std::string label;
};

// Outputs of the unedited model on each example's locality probe, decoded to
// the length of that example's target.
struct LocalityReference {
    std::vector<Tokens> outputs;
};

LocalityReference locality_reference(const TinyTransformer& model,
                                     const std::vector<EditExample>& examples);

// Router over a set of side memories (empty = main memory only).
ValueRouter make_router(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                        Aggregation agg = Aggregation::Mean);

struct EvalOptions {
    Aggregation aggregation = Aggregation::Mean;
};

MetricsReport evaluate(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                       const std::vector<EditExample>& examples, const LocalityReference& ref,
                       const EvalOptions& opts = {});

// Computes the locality reference from `model` itself, which must be the
// unedited model.
MetricsReport evaluate(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                       const std::vector<EditExample>& examples, const EvalOptions& opts = {});

// Perplexity of the routed model over each probe's own next-token sequence.
double locality_perplexity(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                           const std::vector<Tokens>& probes, Aggregation agg);

struct HistogramRow {
    std::string kind;  // edit | paraphrase | locality | irrelevant
    double delta = 0.0;
};

// Largest routing activation over the memories for every query of each kind.
std::vector<HistogramRow> activation_histogram(const TinyTransformer& model,
                                               const std::vector<SideMemory>& memories,
                                               const std::vector<EditExample>& examples,
                                               const std::vector<Tokens>& irrelevant,
                                               Aggregation agg);

// Plain sequential fine-tuning of the main W_v on each edit.
struct BaselineConfig {
    double lr = 1.0;
    std::size_t steps = 30;
};

struct BaselineResult {
    TinyTransformer model;
    MetricsReport report;
};

BaselineResult baseline_ft(const TinyTransformer& model, const std::vector<EditExample>& stream,
                           const BaselineConfig& cfg, const LocalityReference& ref);

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    PretrainOptions pretrain;
    DataConfig data;
    std::string data_dir;         // load the dataset from here instead of generating it
    std::string pretrained_ckpt;  // reuse this checkpoint when it exists, else write it
    EditConfig edit;
    MergeSpec merge;
    EditMode mode = EditMode::Merge;
    std::vector<std::size_t> checkpoints{1, 10, 100};
    bool run_baseline = false;
    BaselineConfig baseline;
    bool record_wall_time = true;
    std::string out_dir;  // empty = write nothing

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

ExperimentConfig load_experiment_config(const std::string& path);

struct ExperimentResult {
    std::vector<MetricsReport> reports;           // one per checkpoint T
    std::vector<MetricsReport> baseline_reports;  // same checkpoints, when enabled
    StreamResult final_stream;                    // editor state at the largest T
    std::vector<HistogramRow> histogram;
};

// Pretrained model for the config: loaded from `pretrained_ckpt` when present,
// otherwise trained on the dataset corpus (and cached there when a path is set).
TinyTransformer pretrained_model(const ExperimentConfig& cfg, const Dataset& data);

Dataset experiment_dataset(const ExperimentConfig& cfg);

ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const std::string& config_path);

struct SweepGrid {
    std::vector<double> rho{0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<std::size_t> k{2, 3};
    std::vector<std::uint64_t> seeds{0, 1, 2};

    static SweepGrid from_json(const nlohmann::json& j);
};

struct SweepCell {
    double rho = 0.0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    MetricsReport report;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    double best_rho = 0.0;
    std::size_t best_k = 0;
    double best_avg = 0.0;  // mean over seeds
};

// Evaluates every (rho, k, seed) cell at the config's largest checkpoint.
SweepResult run_sweep(const ExperimentConfig& base, const SweepGrid& grid);

// One experiment per merge strategy on the same stream and seed.
std::vector<MetricsReport> run_merge_ablation(const ExperimentConfig& base,
                                              const std::vector<MergeStrategy>& strategies);

// ---------------------------------------------------------------------------
// Reports

// CSV with columns T,rel,gen,loc,avg,ppl_loc,wall_time plus a `.txt` summary
// next to it (same stem).
void write_report(const std::vector<MetricsReport>& reports, const std::string& csv_path);
void write_histogram(const std::vector<HistogramRow>& rows, const std::string& path);
void write_edit_log(const std::vector<EditLogEntry>& log, const std::vector<MergeEvent>& events,
                    const std::string& path);
void write_sweep(const SweepResult& sweep, const std::string& csv_path);

std::string format_number(double v);

}  // namespace wise
