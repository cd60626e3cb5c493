#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wise/numerics.hpp"

namespace wise {

using Tokens = std::vector<int>;

struct ModelConfig {
    std::size_t vocab_size = 256;
    std::size_t d_model = 64;
    std::size_t d_ffn = 256;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t max_seq_len = 64;
    std::size_t edit_layer = 2;

    // Throws ConfigError when an invariant is violated.
    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
    Matrix ln1_gain, ln1_bias;            // 1 x d_model
    Matrix w_query, w_key_attn, w_value_attn, w_out_attn;  // d_model x d_model
    Matrix ln2_gain, ln2_bias;            // 1 x d_model
    Matrix ffn_key;                       // d_model x d_ffn   (W_k)
    Matrix ffn_value;                     // d_ffn x d_model   (W_v)
};

// Decoder-only pre-LN transformer. The FFN of every block is the bias-free
// key/value pair  gelu(f * W_k) * W_v.
struct TinyTransformer {
    ModelConfig config;
    Matrix token_embedding;     // vocab x d_model
    Matrix position_embedding;  // max_seq_len x d_model
    std::vector<LayerWeights> layers;
    Matrix final_gain, final_bias;  // 1 x d_model
    Matrix unembedding;             // d_model x vocab

    const Matrix& edit_values() const { return layers.at(config.edit_layer).ffn_value; }
    Matrix& edit_values() { return layers.at(config.edit_layer).ffn_value; }

    // Calls fn(name, matrix) for every parameter, in a fixed order.
    void for_each_parameter(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each_parameter(
        const std::function<void(const std::string&, const Matrix&)>& fn) const;
    std::size_t parameter_count() const;
    bool bit_equal(const TinyTransformer& other) const;
};

// Gaussian initialisation with fan-in scaling; layer-norm gains 1, biases 0.
TinyTransformer init_model(const ModelConfig& config, std::uint64_t seed);

struct ForwardTrace {
    Matrix logits;          // seq_len x vocab
    Matrix ffn_activation;  // seq_len x d_ffn, at the edit layer
};

// Full causal forward pass. When `value_override` is non-null it replaces
// W_v of the edit layer.
ForwardTrace forward(const TinyTransformer& model, std::span<const int> tokens,
                     const Matrix* value_override = nullptr);

// Activations gelu(LN2(h) * W_k) of the edit layer. They do not depend on the
// edit layer's W_v, so one call serves every side memory.
Matrix edit_layer_activation(const TinyTransformer& model, std::span<const int> tokens);

// Forward state captured up to the edit layer's value projection. Running the
// remainder with different value matrices reuses this work; the result is
// bitwise identical to a full forward with the same override.
struct EditLayerState {
    Tokens tokens;
    Matrix residual;    // residual stream after the edit layer's attention
    Matrix activation;  // gelu(LN2(residual) * W_k)
};

EditLayerState capture_edit_layer(const TinyTransformer& model, std::span<const int> tokens);
Matrix logits_from_edit_layer(const TinyTransformer& model, const EditLayerState& state,
                              const Matrix& values);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;
};

// Next-token cross entropy (targets[t] is the token expected after tokens[t],
// or kIgnoreTarget) and its gradient w.r.t. the edit layer's value matrix.
// All other parameters are frozen.
LossAndGrad grad_value_matrix(const TinyTransformer& model, std::span<const int> tokens,
                              std::span<const int> targets, const Matrix& values);
LossAndGrad grad_value_matrix(const TinyTransformer& model, const EditLayerState& state,
                              std::span<const int> targets, const Matrix& values);

// Teacher-forcing layout for "prompt then target": returns tokens
// prompt ++ target[:-1] and targets aligned one position to the right, with
// prompt positions (except the last) ignored.
struct LmExample {
    Tokens tokens;
    Tokens targets;
};
LmExample make_lm_example(std::span<const int> prompt, std::span<const int> target);

// Whole-sequence next-token targets (every position but the last predicts).
LmExample make_lm_sequence(std::span<const int> sequence);

// Loss and gradients for every parameter. Gradient layout mirrors the model.
struct FullGradients {
    double loss = 0.0;
    TinyTransformer grads;
};
FullGradients full_gradients(const TinyTransformer& model, std::span<const int> tokens,
                             std::span<const int> targets);

struct PretrainOptions {
    std::size_t steps = 2000;
    double lr = 0.1;
    std::size_t batch_size = 8;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
    std::uint64_t seed = 0;
    std::size_t log_every = 100;
};

struct TrainingLog {
    std::vector<std::pair<std::size_t, double>> losses;  // (step, batch loss)
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Plain SGD over next-token loss on whole corpus sequences.
TrainingLog pretrain(TinyTransformer& model, const std::vector<Tokens>& corpus,
                     const PretrainOptions& options);

// Mean next-token loss over the corpus (every sequence, every position).
double corpus_loss(const TinyTransformer& model, const std::vector<Tokens>& corpus);

// Returns the value matrix to decode with for this prompt, or nullptr for the
// model's own W_v.
using ValueRouter = std::function<const Matrix*(std::span<const int> prompt)>;

// Argmax decoding; ties go to the lowest token id. The router is consulted once
// on the prompt and its choice is held for every generated token. Returns the
// prompt followed by the generated tokens.
Tokens greedy_decode(const TinyTransformer& model, std::span<const int> prompt,
                     std::size_t max_new, const ValueRouter& router = {});

// Same, but with a fixed value matrix (nullptr = main memory).
Tokens greedy_decode_with(const TinyTransformer& model, std::span<const int> prompt,
                          std::size_t max_new, const Matrix* values);

// Temperature-1 sampling used for prefix augmentation.
Tokens sample_continuation(const TinyTransformer& model, std::span<const int> context,
                           std::size_t count, std::uint64_t seed);

// Byte-level tokenisation.
Tokens encode_bytes(const std::string& text);
std::string decode_bytes(std::span<const int> tokens);

}  // namespace wise
