#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "wise/merge.hpp"
#include "wise/numerics.hpp"

namespace wise {

// How per-token routing norms are reduced to one score per query.
enum class Aggregation { Mean, LastToken };

// A side copy W_v' of the edit layer's value matrix together with its
// knowledge shards. `values` is the consolidated memory used at inference;
// `shard_values[i]` is the working copy edited inside `masks[i]`, and
// `round_base` is what every shard copy started from in the current merge
// round (the main W_v before the first merge).
struct SideMemory {
    Matrix values;
    Matrix round_base;
    std::vector<Mask> masks;
    std::vector<Matrix> shard_values;
    std::vector<std::size_t> shard_fill;
    std::size_t active_shard = 0;
    double epsilon = std::numeric_limits<double>::infinity();
    std::size_t edits_recorded = 0;
    std::size_t merges = 0;

    std::size_t k() const { return masks.size(); }
};

struct RoutingDecision {
    bool use_side = false;
    std::size_t chosen_memory = 0;
    double activation = 0.0;
};

// Fresh side memory: exact copy of `main_values`, k masks of ratio rho,
// epsilon = +inf, shard 0 active.
SideMemory init_side(const Matrix& main_values, std::size_t k, double rho, std::uint64_t seed);

// Mean (or last-row) Euclidean norm of a_t * (W_v' - W_v) over the rows of
// `activation_rows`.
double routing_activation(const Matrix& main_values, const Matrix& side_values,
                          const Matrix& activation_rows, Aggregation agg = Aggregation::Mean);
double routing_activation(const Matrix& main_values, const SideMemory& side,
                          const Matrix& activation_rows, Aggregation agg = Aggregation::Mean);

// Same quantity with a precomputed difference W_v' - W_v, plus its gradient
// with respect to W_v' (accumulated as `scale * dDelta/dW_v'` into `grad`
// when non-null). Rows whose norm is exactly zero contribute no gradient.
double routing_activation_diff(const Matrix& diff, const Matrix& activation_rows,
                               Aggregation agg, Matrix* grad = nullptr, double scale = 1.0);

// epsilon <- min(epsilon, delta_edit).
void update_epsilon(SideMemory& side, double delta_edit);

// Top-1 memory by activation (lowest index on ties); the side memory is used
// only when that activation exceeds its own epsilon.
RoutingDecision route(const Matrix& main_values, std::span<const SideMemory> memories,
                      const Matrix& activation_rows, Aggregation agg = Aggregation::Mean);

}  // namespace wise
