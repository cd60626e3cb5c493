#include <algorithm>
#include <cmath>

#include "wise/errors.hpp"
#include "wise/harness.hpp"

namespace wise {

namespace {

Tokens continuation(const Tokens& decoded, std::size_t prompt_len) {
    return Tokens(decoded.begin() + static_cast<std::ptrdiff_t>(prompt_len), decoded.end());
}

// Fraction of positions where `got` matches `want`.
double token_overlap(const Tokens& got, const Tokens& want) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < want.size() && i < got.size(); ++i) hits += got[i] == want[i];
    return want.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(want.size());
}

std::size_t decode_budget(const TinyTransformer& model, const Tokens& prompt, std::size_t want) {
    const std::size_t cap = model.config.max_seq_len;
    if (prompt.size() >= cap) throw InputError("evaluate: prompt fills the context window");
    return std::min(want, cap - prompt.size());
}

double max_activation(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                      const Tokens& query, Aggregation agg) {
    if (memories.empty()) return 0.0;
    const Matrix act = edit_layer_activation(model, query);
    double best = 0.0;
    for (const auto& m : memories) best = std::max(best, routing_activation(model.edit_values(), m, act, agg));
    return best;
}

}  // namespace

ValueRouter make_router(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                        Aggregation agg) {
    if (memories.empty()) return {};
    return [&model, &memories, agg](std::span<const int> prompt) -> const Matrix* {
        const Matrix act = edit_layer_activation(model, prompt);
        const RoutingDecision d = route(model.edit_values(), memories, act, agg);
        return d.use_side ? &memories[d.chosen_memory].values : nullptr;
    };
}

LocalityReference locality_reference(const TinyTransformer& model,
                                     const std::vector<EditExample>& examples) {
    LocalityReference ref;
    ref.outputs.reserve(examples.size());
    for (const auto& ex : examples) {
        const std::size_t n = decode_budget(model, ex.locality, ex.target.size());
        ref.outputs.push_back(continuation(greedy_decode(model, ex.locality, n), ex.locality.size()));
    }
    return ref;
}

double locality_perplexity(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                           const std::vector<Tokens>& probes, Aggregation agg) {
    const ValueRouter router = make_router(model, memories, agg);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& probe : probes) {
        if (probe.size() < 2) continue;
        const Matrix* values = router ? router(probe) : nullptr;
        const LmExample lm = make_lm_sequence(probe);
        const ForwardTrace trace = forward(model, lm.tokens, values);
        const double ce = cross_entropy(trace.logits, lm.targets);
        const std::size_t n = lm.tokens.size();
        total += ce * static_cast<double>(n);
        count += n;
    }
    if (count == 0) return 1.0;
    return std::exp(total / static_cast<double>(count));
}

MetricsReport evaluate(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                       const std::vector<EditExample>& examples, const LocalityReference& ref,
                       const EvalOptions& opts) {
    if (ref.outputs.size() != examples.size()) {
        throw InputError("evaluate: locality reference does not match the stream");
    }
    const ValueRouter router = make_router(model, memories, opts.aggregation);
    MetricsReport r;
    r.t_edits = examples.size();
    if (examples.empty()) {
        r.rel = r.gen = r.loc = 1.0;
        r.avg = 1.0;
        return r;
    }
    std::size_t rel = 0, gen = 0, loc = 0;
    double rel_tok = 0.0, gen_tok = 0.0;
    std::vector<Tokens> probes;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const EditExample& ex = examples[i];
        const std::size_t n = ex.target.size();
        const Tokens out =
            continuation(greedy_decode(model, ex.prompt, decode_budget(model, ex.prompt, n), router),
                         ex.prompt.size());
        rel += out == ex.target;
        rel_tok += token_overlap(out, ex.target);
        if (ex.paraphrase) {
            const Tokens& p = *ex.paraphrase;
            const Tokens pout =
                continuation(greedy_decode(model, p, decode_budget(model, p, n), router), p.size());
            gen += pout == ex.target;
            gen_tok += token_overlap(pout, ex.target);
            ++r.n_paraphrases;
        }
        const Tokens lout = continuation(
            greedy_decode(model, ex.locality, decode_budget(model, ex.locality, n), router),
            ex.locality.size());
        loc += lout == ref.outputs[i];
        probes.push_back(ex.locality);
    }
    const double t = static_cast<double>(examples.size());
    r.rel = static_cast<double>(rel) / t;
    r.rel_tokens = rel_tok / t;
    r.loc = static_cast<double>(loc) / t;
    if (r.n_paraphrases > 0) {
        const double np = static_cast<double>(r.n_paraphrases);
        r.gen = static_cast<double>(gen) / np;
        r.gen_tokens = gen_tok / np;
        r.avg = (r.rel + r.gen + r.loc) / 3.0;
    } else {
        // Without paraphrases there is no generalization score to average in.
        r.gen = 0.0;
        r.avg = (r.rel + r.loc) / 2.0;
    }
    r.ppl_loc = locality_perplexity(model, memories, probes, opts.aggregation);
    return r;
}

MetricsReport evaluate(const TinyTransformer& model, const std::vector<SideMemory>& memories,
                       const std::vector<EditExample>& examples, const EvalOptions& opts) {
    return evaluate(model, memories, examples, locality_reference(model, examples), opts);
}

std::vector<HistogramRow> activation_histogram(const TinyTransformer& model,
                                               const std::vector<SideMemory>& memories,
                                               const std::vector<EditExample>& examples,
                                               const std::vector<Tokens>& irrelevant,
                                               Aggregation agg) {
    std::vector<HistogramRow> rows;
    for (const auto& ex : examples) rows.push_back({"edit", max_activation(model, memories, ex.prompt, agg)});
    for (const auto& ex : examples) {
        if (ex.paraphrase) rows.push_back({"paraphrase", max_activation(model, memories, *ex.paraphrase, agg)});
    }
    for (const auto& ex : examples) rows.push_back({"locality", max_activation(model, memories, ex.locality, agg)});
    for (const auto& q : irrelevant) rows.push_back({"irrelevant", max_activation(model, memories, q, agg)});
    return rows;
}

BaselineResult baseline_ft(const TinyTransformer& model, const std::vector<EditExample>& stream,
                           const BaselineConfig& cfg, const LocalityReference& ref) {
    if (!(cfg.lr > 0.0)) throw ConfigError("baseline: lr must be positive");
    BaselineResult out{model, {}};
    Matrix& values = out.model.edit_values();
    for (const auto& ex : stream) {
        const LmExample lm = make_lm_example(ex.prompt, ex.target);
        // Layers up to the edit layer's value projection are never touched.
        const EditLayerState state = capture_edit_layer(model, lm.tokens);
        for (std::size_t s = 0; s < cfg.steps; ++s) {
            LossAndGrad g = grad_value_matrix(model, state, lm.targets, values);
            g.grad *= cfg.lr;
            values -= g.grad;
        }
    }
    require_finite(values, "baseline fine-tuned W_v");
    out.report = evaluate(out.model, {}, stream, ref);
    out.report.label = "ft";
    return out;
}

}  // namespace wise
