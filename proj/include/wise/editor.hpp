#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wise/merge.hpp"
#include "wise/model.hpp"
#include "wise/side_memory.hpp"

namespace wise {

struct EditConfig {
    double alpha = 5.0;
    double beta = 20.0;
    double gamma = 10.0;
    // Weight of the routing terms relative to the autoregressive loss.
    double margin_weight = 1.0;
    double lr = 1.0;
    std::size_t steps_per_edit = 30;
    std::size_t edits_per_shard = 25;
    std::size_t k = 2;
    double rho = 0.2;
    std::size_t n_prefixes = 10;
    std::size_t prefix_len = 10;
    std::size_t irrelevant_batch = 4;
    bool use_memo_loss = false;
    std::size_t memo_batch = 1;
    double early_stop_loss = 0.0;  // 0 disables early stopping
    Aggregation aggregation = Aggregation::Mean;
    bool recompute_epsilon_after_merge = false;

    void validate() const;
};

struct EditExample {
    Tokens prompt;
    Tokens target;
    std::optional<Tokens> paraphrase;
    Tokens locality;

    friend bool operator==(const EditExample&, const EditExample&) = default;
};

enum class EditMode { Merge, Retrieve };
std::string to_string(EditMode m);
EditMode parse_edit_mode(const std::string& name);

// Hinge terms of the routing margin loss:
//   max(0, d_i - alpha) + max(0, beta - d_e) + max(0, gamma - (d_e - d_i)).
double margin_loss(double delta_edit, double delta_irrelevant, const EditConfig& cfg);

// max(0, d_m - alpha); 0 when the replay constraint is disabled.
double memo_loss(double delta_replay, const EditConfig& cfg);
// Mean replay hinge over a batch of replayed prompts. Throws ConfigError when
// the constraint is enabled but the batch is empty.
double memo_loss(std::span<const double> replay_deltas, const EditConfig& cfg);

struct EditLoss {
    double loss = 0.0;
    double ar_loss = 0.0;
    double margin = 0.0;
    double memo = 0.0;
    double delta_edit = 0.0;
    double delta_irrelevant = 0.0;
    Matrix grad;  // d loss / d W_v'
};

// Autoregressive loss of the target under `working_values` plus
// margin_weight times the margin loss, where delta_edit is measured on the
// prompt positions and delta_irrelevant is the mean activation over
// `irrelevants`. The gradient is taken with respect to `working_values`.
EditLoss edit_loss(const TinyTransformer& model, const Matrix& working_values,
                   const EditExample& example, const std::vector<Tokens>& irrelevants,
                   const EditConfig& cfg, const std::vector<Tokens>& replay = {});

// Uses the active shard copy of `side` as W_v'.
EditLoss edit_loss(const TinyTransformer& model, const SideMemory& side,
                   const EditExample& example, const std::vector<Tokens>& irrelevants,
                   const EditConfig& cfg);

// W'_active <- W'_active - lr * (M_active (.) grad). Coordinates outside the
// mask are never written.
void masked_step(SideMemory& side, const Matrix& grad, const EditConfig& cfg);

// Original example followed by n_prefixes variants whose prompts are
// (sampled prefix ++ prompt). Prefixes come from temperature-1 sampling of
// the unedited model.
std::vector<EditExample> augment_prefixes(const TinyTransformer& model,
                                          const EditExample& example, const EditConfig& cfg,
                                          std::uint64_t seed);

struct EditLogEntry {
    std::size_t edit_index = 0;
    std::size_t memory = 0;
    std::size_t shard = 0;
    double ar_loss = 0.0;
    double margin = 0.0;
    double delta_edit = 0.0;
    double epsilon = 0.0;
    std::size_t steps = 0;
    bool merged = false;
};

struct MergeEvent {
    std::size_t after_edit = 0;
    std::size_t memory = 0;
    MergeStrategy strategy = MergeStrategy::Ties;
    std::size_t shards = 0;
    double overlap = 0.0;
    std::size_t conflicts = 0;
};

// Called after every masked step with (step index, shard copy before, after,
// active mask). Used by tests to audit subspace freezing.
using StepObserver =
    std::function<void(std::size_t step, const Matrix& before, const Matrix& after, const Mask& mask)>;

// Drives the editing stage over a stream: shard rotation, merging once all k
// shards are full, and (in retrieve mode) a fresh side memory afterwards.
class Editor {
public:
    Editor(const TinyTransformer& model, EditConfig cfg, MergeSpec merge_spec, EditMode mode,
           std::vector<Tokens> irrelevant_pool, std::uint64_t seed);

    // Edits one example into the active shard and updates epsilon.
    EditLogEntry edit_one(const EditExample& example);

    void run(const std::vector<EditExample>& stream);

    const std::vector<SideMemory>& memories() const { return memories_; }
    std::vector<SideMemory>& memories() { return memories_; }
    const std::vector<EditLogEntry>& log() const { return log_; }
    const std::vector<MergeEvent>& merge_events() const { return merge_events_; }
    const EditConfig& config() const { return cfg_; }
    const TinyTransformer& model() const { return model_; }
    std::size_t edits_done() const { return edits_done_; }

    void set_step_observer(StepObserver obs) { observer_ = std::move(obs); }

    // Replaces the editor's memories, e.g. to resume from a checkpoint.
    void set_memories(std::vector<SideMemory> memories);

    // Routing activation of `prompt` against the consolidated values of one
    // memory.
    double activation_of(const Tokens& prompt, std::size_t memory) const;

private:
    struct CachedSeq {
        Tokens tokens;
        Matrix activation;
    };

    SideMemory& active_memory();
    void refresh_values(SideMemory& side) const;
    void finish_edit(const EditExample& example, EditLogEntry& entry);
    void merge_active(EditLogEntry& entry);
    std::uint64_t derive_seed(std::uint64_t tag, std::uint64_t index) const;

    const TinyTransformer& model_;
    EditConfig cfg_;
    MergeSpec merge_spec_;
    EditMode mode_;
    std::uint64_t seed_;
    std::vector<CachedSeq> pool_;
    std::vector<SideMemory> memories_;
    std::vector<std::vector<Tokens>> absorbed_;  // edit prompts per memory
    std::vector<CachedSeq> replay_memories_;     // prompts absorbed by sealed memories
    std::vector<CachedSeq> replay_round_;        // prompts of filled shards this round
    std::vector<Tokens> shard_prompts_;          // prompts of the active shard
    std::vector<EditLogEntry> log_;
    std::vector<MergeEvent> merge_events_;
    std::size_t edits_done_ = 0;
    bool sealed_ = false;  // active memory finished its last merge (retrieve mode)
    StepObserver observer_;
};

// Free-function form of a single edit: runs a one-example stream into `side`.
EditLogEntry edit_one(const TinyTransformer& model, SideMemory& side, const EditExample& example,
                      const std::vector<Tokens>& irr_pool, const EditConfig& cfg,
                      std::uint64_t seed);

struct StreamResult {
    std::vector<SideMemory> memories;
    std::vector<EditLogEntry> log;
    std::vector<MergeEvent> merge_events;
};

StreamResult run_stream(const TinyTransformer& model, const std::vector<EditExample>& stream,
                        const EditConfig& cfg, const MergeSpec& merge_spec, EditMode mode,
                        const std::vector<Tokens>& irr_pool, std::uint64_t seed);

}  // namespace wise
