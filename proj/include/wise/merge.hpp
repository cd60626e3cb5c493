#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "wise/numerics.hpp"

namespace wise {

enum class MergeStrategy { Ties, Linear, Sign };

std::string to_string(MergeStrategy s);
MergeStrategy parse_merge_strategy(const std::string& name);

struct MergeSpec {
    MergeStrategy strategy = MergeStrategy::Ties;
    double trim_keep_ratio = 1.0;  // (0, 1]
    std::vector<double> weights;   // linear only; empty = uniform 1/k
    double scale = 1.0;            // optional global scale on the merged task vector

    void validate(std::size_t num_vectors) const;
};

// Base matrix plus task vectors tau_i = W'_i - base.
struct TaskVectorSet {
    Matrix base;
    std::vector<Matrix> vectors;

    static TaskVectorSet from_models(const Matrix& base, const std::vector<Matrix>& edited);
};

// Binary 0/1 matrix.
using Mask = Matrix;

// k masks of `rows x cols`, each with exactly round(rho * N) ones placed
// uniformly without replacement, independently across masks.
std::vector<Mask> gen_masks(std::size_t rows, std::size_t cols, std::size_t k, double rho,
                            std::uint64_t seed);

// Fraction of coordinates set in every mask of `masks`.
double overlap_fraction(const std::vector<Mask>& masks);

// Zero all but the top ceil(keep_ratio * N) entries by magnitude. Equal
// magnitudes at the cut keep the lower flat index.
Matrix trim_top_k(const Matrix& tau, double keep_ratio);

// Merged task vectors (without the base).
Matrix ties_merge_vector(const std::vector<Matrix>& vectors, double keep_ratio);

Matrix linear_merge_vector(const std::vector<Matrix>& vectors, const std::vector<double>& weights);

Matrix ties_merge(const TaskVectorSet& tv, const MergeSpec& spec);
Matrix linear_merge(const TaskVectorSet& tv, const MergeSpec& spec);
Matrix sign_merge(const TaskVectorSet& tv, const MergeSpec& spec);

// Coordinates where the non-zero task vector entries disagree in sign.
std::size_t sign_conflicts(const std::vector<Matrix>& vectors);

// Builds the task vector set against `main_values` and dispatches on the
// strategy. Returns the consolidated value matrix.
Matrix merge_side_memory(const Matrix& main_values, const std::vector<Matrix>& shard_values,
                         const MergeSpec& spec);

}  // namespace wise
