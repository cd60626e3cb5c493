#include "wise/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "wise/errors.hpp"

namespace wise {

void ModelConfig::validate() const {
    if (vocab_size == 0) throw ConfigError("model.vocab_size must be positive");
    if (d_model == 0 || d_ffn == 0) throw ConfigError("model dimensions must be positive");
    if (n_layers == 0) throw ConfigError("model.n_layers must be positive");
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("model.d_model must be divisible by model.n_heads");
    }
    if (max_seq_len == 0) throw ConfigError("model.max_seq_len must be positive");
    if (edit_layer >= n_layers) throw ConfigError("model.edit_layer must be < model.n_layers");
}

namespace {

void visit_layers(std::vector<LayerWeights>& layers,
                  const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& w = layers[l];
        const std::string p = "layer/" + std::to_string(l) + "/";
        fn(p + "ln1_gain", w.ln1_gain);
        fn(p + "ln1_bias", w.ln1_bias);
        fn(p + "attn_query", w.w_query);
        fn(p + "attn_key", w.w_key_attn);
        fn(p + "attn_value", w.w_value_attn);
        fn(p + "attn_out", w.w_out_attn);
        fn(p + "ln2_gain", w.ln2_gain);
        fn(p + "ln2_bias", w.ln2_bias);
        fn(p + "ffn_key", w.ffn_key);
        fn(p + "ffn_value", w.ffn_value);
    }
}

}  // namespace

void TinyTransformer::for_each_parameter(
    const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("token_embedding", token_embedding);
    fn("position_embedding", position_embedding);
    visit_layers(layers, fn);
    fn("final_gain", final_gain);
    fn("final_bias", final_bias);
    fn("unembedding", unembedding);
}

void TinyTransformer::for_each_parameter(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<TinyTransformer*>(this)->for_each_parameter(
        [&](const std::string& name, Matrix& m) { fn(name, m); });
}

std::size_t TinyTransformer::parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

bool TinyTransformer::bit_equal(const TinyTransformer& other) const {
    if (!(config == other.config)) return false;
    std::vector<const Matrix*> mine, theirs;
    for_each_parameter([&](const std::string&, const Matrix& m) { mine.push_back(&m); });
    other.for_each_parameter([&](const std::string&, const Matrix& m) { theirs.push_back(&m); });
    if (mine.size() != theirs.size()) return false;
    for (std::size_t i = 0; i < mine.size(); ++i)
        if (!mine[i]->bit_equal(*theirs[i])) return false;
    return true;
}

namespace {

TinyTransformer zeros_like(const ModelConfig& c) {
    TinyTransformer m;
    m.config = c;
    m.token_embedding = Matrix(c.vocab_size, c.d_model);
    m.position_embedding = Matrix(c.max_seq_len, c.d_model);
    m.layers.resize(c.n_layers);
    for (auto& l : m.layers) {
        l.ln1_gain = Matrix(1, c.d_model);
        l.ln1_bias = Matrix(1, c.d_model);
        l.w_query = Matrix(c.d_model, c.d_model);
        l.w_key_attn = Matrix(c.d_model, c.d_model);
        l.w_value_attn = Matrix(c.d_model, c.d_model);
        l.w_out_attn = Matrix(c.d_model, c.d_model);
        l.ln2_gain = Matrix(1, c.d_model);
        l.ln2_bias = Matrix(1, c.d_model);
        l.ffn_key = Matrix(c.d_model, c.d_ffn);
        l.ffn_value = Matrix(c.d_ffn, c.d_model);
    }
    m.final_gain = Matrix(1, c.d_model);
    m.final_bias = Matrix(1, c.d_model);
    m.unembedding = Matrix(c.d_model, c.vocab_size);
    return m;
}

}  // namespace

TinyTransformer init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    TinyTransformer m = zeros_like(config);
    std::mt19937_64 rng(seed);
    auto gaussian = [&](Matrix& w, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : w.flat()) v = dist(rng);
    };
    const double d = static_cast<double>(config.d_model);
    const double ffn = static_cast<double>(config.d_ffn);
    const double depth = std::sqrt(2.0 * static_cast<double>(config.n_layers));
    gaussian(m.token_embedding, 0.1);
    gaussian(m.position_embedding, 0.1);
    for (auto& l : m.layers) {
        l.ln1_gain.fill(1.0);
        l.ln2_gain.fill(1.0);
        gaussian(l.w_query, 1.0 / std::sqrt(d));
        gaussian(l.w_key_attn, 1.0 / std::sqrt(d));
        gaussian(l.w_value_attn, 1.0 / std::sqrt(d));
        gaussian(l.w_out_attn, 1.0 / std::sqrt(d) / depth);
        gaussian(l.ffn_key, 1.0 / std::sqrt(d));
        gaussian(l.ffn_value, 1.0 / std::sqrt(ffn) / depth);
    }
    m.final_gain.fill(1.0);
    gaussian(m.unembedding, 1.0 / std::sqrt(d));
    return m;
}

// ---------------------------------------------------------------------------
// Forward machinery

namespace {

struct LayerCache {
    Matrix input;
    LayerNormCache ln1;
    Matrix ln1_out;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, seq x seq (lower triangular)
    Matrix concat;
    Matrix residual_mid;
    LayerNormCache ln2;
    Matrix ln2_out;
    Matrix pre_act;
    Matrix act;
    const Matrix* values = nullptr;
};

struct FullCache {
    std::vector<LayerCache> layers;
    Matrix final_in;
    LayerNormCache final_ln;
    Matrix final_out;
};

void check_tokens(const ModelConfig& c, std::span<const int> tokens) {
    if (tokens.empty()) throw InputError("forward: empty token sequence");
    if (tokens.size() > c.max_seq_len) {
        throw InputError("forward: sequence of " + std::to_string(tokens.size()) +
                         " tokens exceeds max_seq_len " + std::to_string(c.max_seq_len));
    }
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
            throw InputError("forward: token " + std::to_string(t) + " outside vocabulary");
        }
    }
}

Matrix embed(const TinyTransformer& m, std::span<const int> tokens) {
    const std::size_t d = m.config.d_model;
    Matrix x(tokens.size(), d);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto te = m.token_embedding.row_span(static_cast<std::size_t>(tokens[t]));
        auto pe = m.position_embedding.row_span(t);
        for (std::size_t c = 0; c < d; ++c) x(t, c) = te[c] + pe[c];
    }
    return x;
}

// Causal multi-head attention on already-normalised input; returns the
// head concatenation (before the output projection).
Matrix attention_heads(const ModelConfig& c, const Matrix& q, const Matrix& k, const Matrix& v,
                       std::vector<Matrix>* probs_out) {
    const std::size_t seq = q.rows();
    const std::size_t dh = c.d_model / c.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix concat(seq, c.d_model);
    if (probs_out) probs_out->assign(c.n_heads, Matrix());
    std::vector<double> row(seq);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
        const std::size_t off = h * dh;
        Matrix probs;
        if (probs_out) probs = Matrix(seq, seq);
        for (std::size_t i = 0; i < seq; ++i) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += q(i, off + e) * k(j, off + e);
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const double p = row[j] / sum;
                if (probs_out) probs(i, j) = p;
                for (std::size_t e = 0; e < dh; ++e) concat(i, off + e) += p * v(j, off + e);
            }
        }
        if (probs_out) (*probs_out)[h] = std::move(probs);
    }
    return concat;
}

// Attention half of a block: returns the residual after attention.
Matrix attention_block(const TinyTransformer& m, const LayerWeights& w, const Matrix& x,
                       LayerCache* cache) {
    LayerNormCache ln1;
    Matrix ln1_out = layer_norm(x, w.ln1_gain, w.ln1_bias, &ln1);
    Matrix q = matmul(ln1_out, w.w_query);
    Matrix k = matmul(ln1_out, w.w_key_attn);
    Matrix v = matmul(ln1_out, w.w_value_attn);
    Matrix concat = attention_heads(m.config, q, k, v, cache ? &cache->probs : nullptr);
    Matrix h = x + matmul(concat, w.w_out_attn);
    if (cache) {
        cache->input = x;
        cache->ln1 = std::move(ln1);
        cache->ln1_out = std::move(ln1_out);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->concat = std::move(concat);
        cache->residual_mid = h;
    }
    return h;
}

// gelu(LN2(h) * W_k)
Matrix ffn_activation(const LayerWeights& w, const Matrix& h, LayerCache* cache) {
    LayerNormCache ln2;
    Matrix ln2_out = layer_norm(h, w.ln2_gain, w.ln2_bias, &ln2);
    Matrix pre = matmul(ln2_out, w.ffn_key);
    Matrix act = gelu(pre);
    if (cache) {
        cache->ln2 = std::move(ln2);
        cache->ln2_out = std::move(ln2_out);
        cache->pre_act = std::move(pre);
        cache->act = act;
    }
    return act;
}

Matrix layer_forward(const TinyTransformer& m, const LayerWeights& w, const Matrix& x,
                     const Matrix& values, LayerCache* cache) {
    Matrix h = attention_block(m, w, x, cache);
    Matrix act = ffn_activation(w, h, cache);
    if (cache) cache->values = &values;
    return h + matmul(act, values);
}

EditLayerState run_until_edit(const TinyTransformer& m, std::span<const int> tokens,
                              FullCache* cache) {
    check_tokens(m.config, tokens);
    const std::size_t e = m.config.edit_layer;
    if (cache) cache->layers.assign(m.config.n_layers, LayerCache{});
    Matrix x = embed(m, tokens);
    for (std::size_t l = 0; l < e; ++l) {
        x = layer_forward(m, m.layers[l], x, m.layers[l].ffn_value,
                          cache ? &cache->layers[l] : nullptr);
    }
    EditLayerState state;
    state.tokens.assign(tokens.begin(), tokens.end());
    LayerCache* lc = cache ? &cache->layers[e] : nullptr;
    state.residual = attention_block(m, m.layers[e], x, lc);
    state.activation = ffn_activation(m.layers[e], state.residual, lc);
    return state;
}

Matrix run_from_edit(const TinyTransformer& m, const EditLayerState& state, const Matrix& values,
                     FullCache* cache) {
    if (!values.same_shape(m.edit_values())) {
        throw ShapeError("value override must be " + std::to_string(m.config.d_ffn) + "x" +
                         std::to_string(m.config.d_model));
    }
    const std::size_t e = m.config.edit_layer;
    if (cache) cache->layers[e].values = &values;
    Matrix x = state.residual + matmul(state.activation, values);
    for (std::size_t l = e + 1; l < m.config.n_layers; ++l) {
        x = layer_forward(m, m.layers[l], x, m.layers[l].ffn_value,
                          cache ? &cache->layers[l] : nullptr);
    }
    LayerNormCache lnf;
    Matrix out = layer_norm(x, m.final_gain, m.final_bias, &lnf);
    Matrix logits = matmul(out, m.unembedding);
    if (cache) {
        cache->final_in = std::move(x);
        cache->final_ln = std::move(lnf);
        cache->final_out = std::move(out);
    }
    return logits;
}

// ---------------------------------------------------------------------------
// Backward machinery

void attention_heads_backward(const ModelConfig& c, const LayerCache& lc, const Matrix& d_concat,
                              Matrix& dq, Matrix& dk, Matrix& dv) {
    const std::size_t seq = d_concat.rows();
    const std::size_t dh = c.d_model / c.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    dq = Matrix(seq, c.d_model);
    dk = Matrix(seq, c.d_model);
    dv = Matrix(seq, c.d_model);
    std::vector<double> dp(seq);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
        const std::size_t off = h * dh;
        const Matrix& probs = lc.probs[h];
        for (std::size_t i = 0; i < seq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += d_concat(i, off + e) * lc.v(j, off + e);
                dp[j] = s;
                dot += s * probs(i, j);
                const double p = probs(i, j);
                for (std::size_t e = 0; e < dh; ++e) dv(j, off + e) += p * d_concat(i, off + e);
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const double ds = probs(i, j) * (dp[j] - dot) * scale;
                for (std::size_t e = 0; e < dh; ++e) {
                    dq(i, off + e) += ds * lc.k(j, off + e);
                    dk(j, off + e) += ds * lc.q(i, off + e);
                }
            }
        }
    }
}

// Backpropagates through one block. `grads` may be null when only the input
// gradient is required.
Matrix layer_backward(const TinyTransformer& m, const LayerWeights& w, const LayerCache& lc,
                      const Matrix& d_out, LayerWeights* grads) {
    // FFN half.
    Matrix d_act = matmul_nt(d_out, *lc.values);
    Matrix d_pre = gelu_backward(lc.pre_act, d_act);
    Matrix d_ln2 = matmul_nt(d_pre, w.ffn_key);
    if (grads) {
        matmul_tn_acc(lc.act, d_out, grads->ffn_value);
        matmul_tn_acc(lc.ln2_out, d_pre, grads->ffn_key);
    }
    Matrix d_h = d_out + layer_norm_backward(d_ln2, w.ln2_gain, lc.ln2,
                                             grads ? &grads->ln2_gain : nullptr,
                                             grads ? &grads->ln2_bias : nullptr);
    // Attention half.
    Matrix d_concat = matmul_nt(d_h, w.w_out_attn);
    if (grads) matmul_tn_acc(lc.concat, d_h, grads->w_out_attn);
    Matrix dq, dk, dv;
    attention_heads_backward(m.config, lc, d_concat, dq, dk, dv);
    if (grads) {
        matmul_tn_acc(lc.ln1_out, dq, grads->w_query);
        matmul_tn_acc(lc.ln1_out, dk, grads->w_key_attn);
        matmul_tn_acc(lc.ln1_out, dv, grads->w_value_attn);
    }
    Matrix d_ln1 = matmul_nt(dq, w.w_query);
    d_ln1 += matmul_nt(dk, w.w_key_attn);
    d_ln1 += matmul_nt(dv, w.w_value_attn);
    return d_h + layer_norm_backward(d_ln1, w.ln1_gain, lc.ln1,
                                     grads ? &grads->ln1_gain : nullptr,
                                     grads ? &grads->ln1_bias : nullptr);
}

// Gradient w.r.t. the residual stream entering the final layer norm, then
// back down to the output of layer `stop_layer`.
Matrix backward_to_layer_output(const TinyTransformer& m, const FullCache& cache,
                                const Matrix& d_logits, std::size_t stop_layer,
                                TinyTransformer* grads) {
    Matrix d_final_out = matmul_nt(d_logits, m.unembedding);
    if (grads) matmul_tn_acc(cache.final_out, d_logits, grads->unembedding);
    Matrix d = layer_norm_backward(d_final_out, m.final_gain, cache.final_ln,
                                   grads ? &grads->final_gain : nullptr,
                                   grads ? &grads->final_bias : nullptr);
    for (std::size_t l = m.config.n_layers; l-- > stop_layer + 1;) {
        d = layer_backward(m, m.layers[l], cache.layers[l], d, grads ? &grads->layers[l] : nullptr);
    }
    return d;
}

}  // namespace

ForwardTrace forward(const TinyTransformer& model, std::span<const int> tokens,
                     const Matrix* value_override) {
    EditLayerState state = run_until_edit(model, tokens, nullptr);
    const Matrix& values = value_override ? *value_override : model.edit_values();
    ForwardTrace trace;
    trace.logits = run_from_edit(model, state, values, nullptr);
    trace.ffn_activation = std::move(state.activation);
    return trace;
}

Matrix edit_layer_activation(const TinyTransformer& model, std::span<const int> tokens) {
    return run_until_edit(model, tokens, nullptr).activation;
}

EditLayerState capture_edit_layer(const TinyTransformer& model, std::span<const int> tokens) {
    return run_until_edit(model, tokens, nullptr);
}

Matrix logits_from_edit_layer(const TinyTransformer& model, const EditLayerState& state,
                              const Matrix& values) {
    return run_from_edit(model, state, values, nullptr);
}

LossAndGrad grad_value_matrix(const TinyTransformer& model, const EditLayerState& state,
                              std::span<const int> targets, const Matrix& values) {
    if (targets.size() != state.tokens.size()) {
        throw InputError("grad_value_matrix: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(state.tokens.size()) + " tokens");
    }
    FullCache cache;
    cache.layers.assign(model.config.n_layers, LayerCache{});
    Matrix logits = run_from_edit(model, state, values, &cache);
    LossAndGrad out;
    Matrix d_logits;
    out.loss = cross_entropy_with_grad(logits, targets, d_logits);
    Matrix d_edit_out =
        backward_to_layer_output(model, cache, d_logits, model.config.edit_layer, nullptr);
    out.grad = matmul_tn(state.activation, d_edit_out);
    return out;
}

LossAndGrad grad_value_matrix(const TinyTransformer& model, std::span<const int> tokens,
                              std::span<const int> targets, const Matrix& values) {
    if (targets.size() != tokens.size()) {
        throw InputError("grad_value_matrix: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(tokens.size()) + " tokens");
    }
    return grad_value_matrix(model, capture_edit_layer(model, tokens), targets, values);
}

LmExample make_lm_example(std::span<const int> prompt, std::span<const int> target) {
    if (prompt.empty() || target.empty()) {
        throw InputError("make_lm_example: prompt and target must be non-empty");
    }
    LmExample ex;
    ex.tokens.assign(prompt.begin(), prompt.end());
    ex.tokens.insert(ex.tokens.end(), target.begin(), target.end() - 1);
    ex.targets.assign(ex.tokens.size(), kIgnoreTarget);
    for (std::size_t i = 0; i < target.size(); ++i) ex.targets[prompt.size() - 1 + i] = target[i];
    return ex;
}

LmExample make_lm_sequence(std::span<const int> sequence) {
    if (sequence.size() < 2) throw InputError("make_lm_sequence: need at least 2 tokens");
    LmExample ex;
    ex.tokens.assign(sequence.begin(), sequence.end() - 1);
    ex.targets.assign(sequence.begin() + 1, sequence.end());
    return ex;
}

FullGradients full_gradients(const TinyTransformer& model, std::span<const int> tokens,
                             std::span<const int> targets) {
    if (targets.size() != tokens.size()) {
        throw InputError("full_gradients: targets misaligned with tokens");
    }
    FullCache cache;
    EditLayerState state = run_until_edit(model, tokens, &cache);
    Matrix logits = run_from_edit(model, state, model.edit_values(), &cache);

    FullGradients out;
    out.grads = zeros_like(model.config);
    Matrix d_logits;
    out.loss = cross_entropy_with_grad(logits, targets, d_logits);
    Matrix d = backward_to_layer_output(model, cache, d_logits, model.config.edit_layer,
                                        &out.grads);
    for (std::size_t l = model.config.edit_layer + 1; l-- > 0;) {
        d = layer_backward(model, model.layers[l], cache.layers[l], d, &out.grads.layers[l]);
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto te = out.grads.token_embedding.row_span(static_cast<std::size_t>(tokens[t]));
        auto pe = out.grads.position_embedding.row_span(t);
        for (std::size_t c = 0; c < model.config.d_model; ++c) {
            te[c] += d(t, c);
            pe[c] += d(t, c);
        }
    }
    return out;
}

double corpus_loss(const TinyTransformer& model, const std::vector<Tokens>& corpus) {
    if (corpus.empty()) throw InputError("corpus_loss: empty corpus");
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& seq : corpus) {
        if (seq.size() < 2) continue;
        LmExample ex = make_lm_sequence(seq);
        const double l = cross_entropy(forward(model, ex.tokens).logits, ex.targets);
        total += l * static_cast<double>(ex.tokens.size());
        count += ex.tokens.size();
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

TrainingLog pretrain(TinyTransformer& model, const std::vector<Tokens>& corpus,
                     const PretrainOptions& options) {
    if (corpus.empty()) throw InputError("pretrain: empty corpus");
    std::vector<const Tokens*> usable;
    for (const auto& seq : corpus) {
        if (seq.size() > model.config.max_seq_len + 1) {
            throw InputError("pretrain: corpus sequence longer than max_seq_len");
        }
        if (seq.size() >= 2) usable.push_back(&seq);
    }
    if (usable.empty()) throw InputError("pretrain: corpus has no sequence of length >= 2");
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);

    TrainingLog log;
    log.initial_loss = corpus_loss(model, corpus);
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    for (std::size_t step = 0; step < options.steps; ++step) {
        TinyTransformer acc = zeros_like(model.config);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            LmExample ex = make_lm_sequence(*usable[pick(rng)]);
            FullGradients g = full_gradients(model, ex.tokens, ex.targets);
            batch_loss += g.loss;
            std::vector<Matrix*> dst;
            acc.for_each_parameter([&](const std::string&, Matrix& m) { dst.push_back(&m); });
            std::size_t i = 0;
            g.grads.for_each_parameter([&](const std::string&, Matrix& m) { *dst[i++] += m; });
        }
        batch_loss /= static_cast<double>(batch);
        double sq = 0.0;
        acc.for_each_parameter([&](const std::string&, Matrix& m) {
            m *= 1.0 / static_cast<double>(batch);
            for (double v : m.flat()) sq += v * v;
        });
        const double norm = std::sqrt(sq);
        double scale = options.lr;
        if (options.clip_norm > 0.0 && norm > options.clip_norm) scale *= options.clip_norm / norm;

        std::vector<Matrix*> grads;
        acc.for_each_parameter([&](const std::string&, Matrix& m) { grads.push_back(&m); });
        std::size_t i = 0;
        model.for_each_parameter([&](const std::string&, Matrix& w) {
            const Matrix& g = *grads[i++];
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= scale * g[j];
        });
        if (options.log_every > 0 && (step % options.log_every == 0 || step + 1 == options.steps)) {
            log.losses.emplace_back(step, batch_loss);
        }
    }
    log.final_loss = options.steps == 0 ? log.initial_loss : corpus_loss(model, corpus);
    return log;
}

Tokens greedy_decode_with(const TinyTransformer& model, std::span<const int> prompt,
                          std::size_t max_new, const Matrix* values) {
    if (prompt.empty()) throw InputError("greedy_decode: empty prompt");
    Tokens seq(prompt.begin(), prompt.end());
    for (std::size_t n = 0; n < max_new; ++n) {
        ForwardTrace tr = forward(model, seq, values);
        auto last = tr.logits.row_span(tr.logits.rows() - 1);
        std::size_t best = 0;
        for (std::size_t c = 1; c < last.size(); ++c)
            if (last[c] > last[best]) best = c;
        seq.push_back(static_cast<int>(best));
    }
    return seq;
}

Tokens greedy_decode(const TinyTransformer& model, std::span<const int> prompt,
                     std::size_t max_new, const ValueRouter& router) {
    if (prompt.empty()) throw InputError("greedy_decode: empty prompt");
    const Matrix* values = router ? router(prompt) : nullptr;
    return greedy_decode_with(model, prompt, max_new, values);
}

Tokens sample_continuation(const TinyTransformer& model, std::span<const int> context,
                           std::size_t count, std::uint64_t seed) {
    if (context.empty()) throw InputError("sample_continuation: empty context");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Tokens seq(context.begin(), context.end());
    for (std::size_t n = 0; n < count; ++n) {
        ForwardTrace tr = forward(model, seq);
        auto last = tr.logits.row_span(tr.logits.rows() - 1);
        Matrix probs = softmax_rows(Matrix::row(last));
        const double u = unif(rng);
        double cum = 0.0;
        std::size_t chosen = probs.cols() - 1;
        for (std::size_t c = 0; c < probs.cols(); ++c) {
            cum += probs[c];
            if (u < cum) {
                chosen = c;
                break;
            }
        }
        seq.push_back(static_cast<int>(chosen));
    }
    return Tokens(seq.begin() + static_cast<std::ptrdiff_t>(context.size()), seq.end());
}

Tokens encode_bytes(const std::string& text) {
    Tokens out;
    out.reserve(text.size());
    for (unsigned char ch : text) out.push_back(static_cast<int>(ch));
    return out;
}

std::string decode_bytes(std::span<const int> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

}  // namespace wise
