#include "wise/editor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wise/errors.hpp"

namespace wise {

void EditConfig::validate() const {
    if (!(alpha >= 0.0 && alpha < beta)) throw ConfigError("edit: require 0 <= alpha < beta");
    if (!(gamma > 0.0)) throw ConfigError("edit: gamma must be positive");
    if (!(lr > 0.0)) throw ConfigError("edit: lr must be positive");
    if (!(margin_weight >= 0.0)) throw ConfigError("edit: margin_weight must be >= 0");
    if (k == 0) throw ConfigError("edit: k must be >= 1");
    if (edits_per_shard == 0) throw ConfigError("edit: edits_per_shard must be >= 1");
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("edit: rho must lie in (0, 1]");
    if (early_stop_loss < 0.0) throw ConfigError("edit: early_stop_loss must be >= 0");
}

std::string to_string(EditMode m) { return m == EditMode::Merge ? "merge" : "retrieve"; }

EditMode parse_edit_mode(const std::string& name) {
    if (name == "merge") return EditMode::Merge;
    if (name == "retrieve") return EditMode::Retrieve;
    throw ConfigError("unknown edit mode '" + name + "' (expected merge or retrieve)");
}

double margin_loss(double delta_edit, double delta_irrelevant, const EditConfig& cfg) {
    return std::max(0.0, delta_irrelevant - cfg.alpha) + std::max(0.0, cfg.beta - delta_edit) +
           std::max(0.0, cfg.gamma - (delta_edit - delta_irrelevant));
}

double memo_loss(double delta_replay, const EditConfig& cfg) {
    if (!cfg.use_memo_loss) return 0.0;
    return std::max(0.0, delta_replay - cfg.alpha);
}

double memo_loss(std::span<const double> replay_deltas, const EditConfig& cfg) {
    if (!cfg.use_memo_loss) return 0.0;
    if (replay_deltas.empty()) throw ConfigError("memo loss: empty replay pool");
    double total = 0.0;
    for (double d : replay_deltas) total += memo_loss(d, cfg);
    return total / static_cast<double>(replay_deltas.size());
}

namespace {

Matrix row_range(const Matrix& m, std::size_t begin, std::size_t end) {
    Matrix out(end - begin, m.cols());
    std::copy(m.data() + begin * m.cols(), m.data() + end * m.cols(), out.data());
    return out;
}

Matrix first_rows(const Matrix& m, std::size_t n) { return row_range(m, 0, n); }

// Everything the loss needs about one (possibly prefixed) edit example.
struct PreparedExample {
    EditLayerState state;
    Tokens targets;
    Matrix prompt_rows;
};

// `skip` leading prompt positions (a sampled prefix) are left out of the
// routing rows, so the margin acts on the edit prompt in its prefixed context.
PreparedExample prepare(const TinyTransformer& model, const EditExample& ex, std::size_t skip = 0) {
    LmExample lm = make_lm_example(ex.prompt, ex.target);
    PreparedExample p;
    p.state = capture_edit_layer(model, lm.tokens);
    p.targets = std::move(lm.targets);
    p.prompt_rows = row_range(p.state.activation, skip, ex.prompt.size());
    return p;
}

EditLoss compute_edit_loss(const TinyTransformer& model, const Matrix& working,
                           const PreparedExample& ex, const std::vector<const Matrix*>& irrelevant,
                           const std::vector<const Matrix*>& replay, const EditConfig& cfg) {
    LossAndGrad ar = grad_value_matrix(model, ex.state, ex.targets, working);
    EditLoss out;
    out.ar_loss = ar.loss;
    out.grad = std::move(ar.grad);

    const Matrix diff = working - model.edit_values();
    const Aggregation agg = cfg.aggregation;
    out.delta_edit = routing_activation_diff(diff, ex.prompt_rows, agg);
    double d_irr = 0.0;
    for (const Matrix* a : irrelevant) d_irr += routing_activation_diff(diff, *a, agg);
    if (!irrelevant.empty()) d_irr /= static_cast<double>(irrelevant.size());
    out.delta_irrelevant = d_irr;

    const bool h_irr = d_irr - cfg.alpha > 0.0;
    const bool h_edit = cfg.beta - out.delta_edit > 0.0;
    const bool h_gap = cfg.gamma - (out.delta_edit - d_irr) > 0.0;
    if (irrelevant.empty() && (h_irr || h_gap)) {
        throw ConfigError("edit loss: irrelevant batch is empty while its hinge is active");
    }
    out.margin = margin_loss(out.delta_edit, d_irr, cfg);

    const double lambda = cfg.margin_weight;
    const double c_edit = -lambda * ((h_edit ? 1.0 : 0.0) + (h_gap ? 1.0 : 0.0));
    const double c_irr = lambda * ((h_irr ? 1.0 : 0.0) + (h_gap ? 1.0 : 0.0));
    if (c_edit != 0.0) routing_activation_diff(diff, ex.prompt_rows, agg, &out.grad, c_edit);
    if (c_irr != 0.0) {
        const double w = c_irr / static_cast<double>(irrelevant.size());
        for (const Matrix* a : irrelevant) routing_activation_diff(diff, *a, agg, &out.grad, w);
    }

    if (cfg.use_memo_loss && !replay.empty()) {
        const double w = lambda / static_cast<double>(replay.size());
        std::vector<double> deltas;
        for (const Matrix* a : replay) {
            const double d = routing_activation_diff(diff, *a, agg);
            deltas.push_back(d);
            if (d - cfg.alpha > 0.0) routing_activation_diff(diff, *a, agg, &out.grad, w);
        }
        out.memo = memo_loss(deltas, cfg);
    }
    out.loss = out.ar_loss + lambda * (out.margin + out.memo);
    return out;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

EditLoss edit_loss(const TinyTransformer& model, const Matrix& working_values,
                   const EditExample& example, const std::vector<Tokens>& irrelevants,
                   const EditConfig& cfg, const std::vector<Tokens>& replay) {
    PreparedExample ex = prepare(model, example);
    std::vector<Matrix> irr_acts, replay_acts;
    for (const auto& t : irrelevants) irr_acts.push_back(edit_layer_activation(model, t));
    for (const auto& t : replay) replay_acts.push_back(edit_layer_activation(model, t));
    std::vector<const Matrix*> irr, rep;
    for (const auto& a : irr_acts) irr.push_back(&a);
    for (const auto& a : replay_acts) rep.push_back(&a);
    return compute_edit_loss(model, working_values, ex, irr, rep, cfg);
}

EditLoss edit_loss(const TinyTransformer& model, const SideMemory& side,
                   const EditExample& example, const std::vector<Tokens>& irrelevants,
                   const EditConfig& cfg) {
    return edit_loss(model, side.shard_values.at(side.active_shard), example, irrelevants, cfg);
}

void masked_step(SideMemory& side, const Matrix& grad, const EditConfig& cfg) {
    if (side.active_shard >= side.shard_values.size()) {
        throw InputError("masked_step: no active shard " + std::to_string(side.active_shard));
    }
    Matrix& w = side.shard_values[side.active_shard];
    const Mask& mask = side.masks[side.active_shard];
    if (!grad.same_shape(w)) throw ShapeError("masked_step: gradient shape differs from memory");
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (mask[i] != 0.0) w[i] -= cfg.lr * grad[i];
    }
}

std::vector<EditExample> augment_prefixes(const TinyTransformer& model,
                                          const EditExample& example, const EditConfig& cfg,
                                          std::uint64_t seed) {
    std::vector<EditExample> out{example};
    if (cfg.prefix_len == 0) return out;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> first_letter('a', 'z');
    for (std::size_t i = 0; i < cfg.n_prefixes; ++i) {
        Tokens prefix{first_letter(rng)};
        Tokens rest = sample_continuation(model, prefix, cfg.prefix_len - 1, rng());
        prefix.insert(prefix.end(), rest.begin(), rest.end());
        EditExample v = example;
        v.prompt = prefix;
        v.prompt.insert(v.prompt.end(), example.prompt.begin(), example.prompt.end());
        if (v.prompt.size() + v.target.size() - 1 > model.config.max_seq_len) {
            throw InputError("augment_prefixes: prefixed example exceeds max_seq_len");
        }
        out.push_back(std::move(v));
    }
    return out;
}

// ---------------------------------------------------------------------------

Editor::Editor(const TinyTransformer& model, EditConfig cfg, MergeSpec merge_spec, EditMode mode,
               std::vector<Tokens> irrelevant_pool, std::uint64_t seed)
    : model_(model),
      cfg_(std::move(cfg)),
      merge_spec_(std::move(merge_spec)),
      mode_(mode),
      seed_(seed) {
    cfg_.validate();
    merge_spec_.validate(cfg_.k);
    pool_.reserve(irrelevant_pool.size());
    for (auto& seq : irrelevant_pool) {
        if (seq.empty()) continue;
        if (seq.size() > model_.config.max_seq_len) seq.resize(model_.config.max_seq_len);
        Matrix act = edit_layer_activation(model_, seq);
        pool_.push_back({std::move(seq), std::move(act)});
    }
    memories_.push_back(init_side(model_.edit_values(), cfg_.k, cfg_.rho, derive_seed(1, 0)));
    absorbed_.emplace_back();
}

std::uint64_t Editor::derive_seed(std::uint64_t tag, std::uint64_t index) const {
    return splitmix(splitmix(seed_ ^ (tag * 0xD1B54A32D192ED03ULL)) + index);
}

void Editor::set_memories(std::vector<SideMemory> memories) {
    if (memories.empty()) throw ConfigError("editor: need at least one side memory");
    memories_ = std::move(memories);
    absorbed_.assign(memories_.size(), {});
    sealed_ = false;
}

SideMemory& Editor::active_memory() { return memories_.back(); }

double Editor::activation_of(const Tokens& prompt, std::size_t memory) const {
    return routing_activation(model_.edit_values(), memories_.at(memory),
                              edit_layer_activation(model_, prompt), cfg_.aggregation);
}

void Editor::refresh_values(SideMemory& side) const {
    std::vector<Matrix> shards;
    for (std::size_t i = 0; i < side.k(); ++i) {
        if (side.shard_fill[i] > 0 || i == side.active_shard) shards.push_back(side.shard_values[i]);
    }
    MergeSpec spec = merge_spec_;
    if (spec.weights.size() != shards.size()) spec.weights.clear();
    side.values = merge_side_memory(side.round_base, shards, spec);
}

EditLogEntry Editor::edit_one(const EditExample& example) {
    if (example.prompt.empty() || example.target.empty()) {
        throw InputError("edit: prompt and target must be non-empty");
    }
    if (sealed_) {
        memories_.push_back(init_side(model_.edit_values(), cfg_.k, cfg_.rho,
                                      derive_seed(1, memories_.size())));
        absorbed_.emplace_back();
        sealed_ = false;
    }
    SideMemory& side = active_memory();
    if (side.shard_fill.at(side.active_shard) >= cfg_.edits_per_shard) {
        throw InputError("edit: active shard is already full");
    }

    const std::size_t index = edits_done_;
    std::vector<EditExample> variants = augment_prefixes(model_, example, cfg_, derive_seed(2, index));
    std::vector<PreparedExample> prepared;
    prepared.reserve(variants.size());
    for (const auto& v : variants) {
        prepared.push_back(prepare(model_, v, v.prompt.size() - example.prompt.size()));
    }

    std::mt19937_64 rng(derive_seed(3, index));
    std::vector<const CachedSeq*> replay_pool;
    if (cfg_.use_memo_loss) {
        for (const auto& r : replay_memories_) replay_pool.push_back(&r);
        for (const auto& r : replay_round_) replay_pool.push_back(&r);
    }

    EditLogEntry entry;
    entry.edit_index = index;
    entry.memory = memories_.size() - 1;
    entry.shard = side.active_shard;
    Matrix before;
    for (std::size_t step = 0; step < cfg_.steps_per_edit; ++step) {
        const PreparedExample& ex = prepared[step % prepared.size()];
        std::vector<const Matrix*> irr;
        if (!pool_.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
            for (std::size_t b = 0; b < cfg_.irrelevant_batch; ++b) irr.push_back(&pool_[pick(rng)].activation);
        }
        std::vector<const Matrix*> rep;
        if (!replay_pool.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, replay_pool.size() - 1);
            for (std::size_t b = 0; b < cfg_.memo_batch; ++b) rep.push_back(&replay_pool[pick(rng)]->activation);
        }
        Matrix& working = side.shard_values[side.active_shard];
        EditLoss loss = compute_edit_loss(model_, working, ex, irr, rep, cfg_);
        entry.ar_loss = loss.ar_loss;
        entry.margin = loss.margin;
        entry.steps = step + 1;
        if (cfg_.early_stop_loss > 0.0 && loss.loss < cfg_.early_stop_loss) break;
        if (observer_) before = working;
        masked_step(side, loss.grad, cfg_);
        if (observer_) observer_(step, before, working, side.masks[side.active_shard]);
    }
    finish_edit(example, entry);
    log_.push_back(entry);
    ++edits_done_;
    return entry;
}

void Editor::finish_edit(const EditExample& example, EditLogEntry& entry) {
    SideMemory& side = active_memory();
    refresh_values(side);
    const Matrix act = first_rows(edit_layer_activation(model_, example.prompt), example.prompt.size());
    entry.delta_edit = routing_activation(model_.edit_values(), side, act, cfg_.aggregation);
    update_epsilon(side, entry.delta_edit);
    ++side.edits_recorded;
    ++side.shard_fill[side.active_shard];
    absorbed_.back().push_back(example.prompt);
    shard_prompts_.push_back(example.prompt);

    if (side.shard_fill[side.active_shard] >= cfg_.edits_per_shard) {
        if (side.active_shard + 1 == side.k()) {
            merge_active(entry);
        } else {
            for (auto& p : shard_prompts_) {
                Matrix a = edit_layer_activation(model_, p);
                replay_round_.push_back({std::move(p), std::move(a)});
            }
            shard_prompts_.clear();
            ++side.active_shard;
        }
    }
    entry.epsilon = side.epsilon;
}

void Editor::merge_active(EditLogEntry& entry) {
    SideMemory& side = active_memory();
    std::vector<Matrix> taus;
    for (const auto& w : side.shard_values) taus.push_back(w - side.round_base);
    MergeEvent ev;
    ev.after_edit = edits_done_;
    ev.memory = memories_.size() - 1;
    ev.strategy = merge_spec_.strategy;
    ev.shards = side.k();
    ev.overlap = overlap_fraction(side.masks);
    ev.conflicts = sign_conflicts(taus);
    merge_events_.push_back(ev);

    refresh_values(side);  // every shard is full, so this is the k-way merge
    side.round_base = side.values;
    for (auto& w : side.shard_values) w = side.values;
    std::fill(side.shard_fill.begin(), side.shard_fill.end(), 0);
    side.masks = gen_masks(side.values.rows(), side.values.cols(), cfg_.k, cfg_.rho,
                           derive_seed(4, merge_events_.size()));
    side.active_shard = 0;
    ++side.merges;
    entry.merged = true;

    if (cfg_.recompute_epsilon_after_merge) {
        double eps = std::numeric_limits<double>::infinity();
        for (const auto& p : absorbed_.back()) {
            eps = std::min(eps, routing_activation(model_.edit_values(), side,
                                                   edit_layer_activation(model_, p),
                                                   cfg_.aggregation));
        }
        side.epsilon = eps;
    }

    shard_prompts_.clear();
    replay_round_.clear();
    if (mode_ == EditMode::Retrieve) {
        for (const auto& p : absorbed_.back()) {
            replay_memories_.push_back({p, edit_layer_activation(model_, p)});
        }
        sealed_ = true;
    }
}

void Editor::run(const std::vector<EditExample>& stream) {
    for (const auto& ex : stream) edit_one(ex);
}

EditLogEntry edit_one(const TinyTransformer& model, SideMemory& side, const EditExample& example,
                      const std::vector<Tokens>& irr_pool, const EditConfig& cfg,
                      std::uint64_t seed) {
    EditConfig c = cfg;
    c.k = side.k();
    Editor editor(model, c, MergeSpec{}, EditMode::Merge, irr_pool, seed);
    editor.set_memories({side});
    EditLogEntry e = editor.edit_one(example);
    side = editor.memories().back();
    return e;
}

StreamResult run_stream(const TinyTransformer& model, const std::vector<EditExample>& stream,
                        const EditConfig& cfg, const MergeSpec& merge_spec, EditMode mode,
                        const std::vector<Tokens>& irr_pool, std::uint64_t seed) {
    Editor editor(model, cfg, merge_spec, mode, irr_pool, seed);
    editor.run(stream);
    return {editor.memories(), editor.log(), editor.merge_events()};
}

}  // namespace wise
