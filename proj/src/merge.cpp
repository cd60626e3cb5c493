#include "wise/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "wise/errors.hpp"

namespace wise {

std::string to_string(MergeStrategy s) {
    switch (s) {
        case MergeStrategy::Ties: return "ties";
        case MergeStrategy::Linear: return "linear";
        case MergeStrategy::Sign: return "sign";
    }
    return "ties";
}

MergeStrategy parse_merge_strategy(const std::string& name) {
    if (name == "ties") return MergeStrategy::Ties;
    if (name == "linear") return MergeStrategy::Linear;
    if (name == "sign") return MergeStrategy::Sign;
    throw ConfigError("unknown merge strategy '" + name + "'");
}

void MergeSpec::validate(std::size_t num_vectors) const {
    if (!(trim_keep_ratio > 0.0 && trim_keep_ratio <= 1.0)) {
        throw ConfigError("merge.trim_keep_ratio must lie in (0, 1]");
    }
    if (strategy == MergeStrategy::Linear && !weights.empty()) {
        if (weights.size() != num_vectors) {
            throw ConfigError("merge.weights has " + std::to_string(weights.size()) +
                              " entries for " + std::to_string(num_vectors) + " task vectors");
        }
        const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("merge.weights must sum to 1");
    }
}

TaskVectorSet TaskVectorSet::from_models(const Matrix& base, const std::vector<Matrix>& edited) {
    TaskVectorSet tv;
    tv.base = base;
    tv.vectors.reserve(edited.size());
    for (const auto& w : edited) {
        if (!w.same_shape(base)) throw ShapeError("task vector shape differs from base");
        tv.vectors.push_back(w - base);
    }
    return tv;
}

std::vector<Mask> gen_masks(std::size_t rows, std::size_t cols, std::size_t k, double rho,
                            std::uint64_t seed) {
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("mask ratio rho must lie in (0, 1]");
    if (k == 0) throw ConfigError("number of masks k must be >= 1");
    const std::size_t n = rows * cols;
    const auto ones = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n)));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(n);
    std::vector<Mask> masks;
    masks.reserve(k);
    for (std::size_t m = 0; m < k; ++m) {
        std::iota(idx.begin(), idx.end(), 0);
        // Partial Fisher-Yates: the first `ones` slots are a uniform sample.
        for (std::size_t i = 0; i < ones; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        Mask mask(rows, cols);
        for (std::size_t i = 0; i < ones; ++i) mask[idx[i]] = 1.0;
        masks.push_back(std::move(mask));
    }
    return masks;
}

double overlap_fraction(const std::vector<Mask>& masks) {
    if (masks.empty()) return 0.0;
    const std::size_t n = masks.front().size();
    if (n == 0) return 0.0;
    std::size_t both = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool all = true;
        for (const auto& m : masks) all = all && m[i] != 0.0;
        both += all ? 1 : 0;
    }
    return static_cast<double>(both) / static_cast<double>(n);
}

Matrix trim_top_k(const Matrix& tau, double keep_ratio) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
        throw ConfigError("trim keep ratio must lie in (0, 1]");
    }
    const std::size_t n = tau.size();
    const auto keep = static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(n) - 1e-9));
    if (keep >= n) return tau;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(tau[a]) > std::abs(tau[b]);
    });
    Matrix out(tau.rows(), tau.cols());
    for (std::size_t i = 0; i < keep; ++i) out[order[i]] = tau[order[i]];
    return out;
}

Matrix ties_merge_vector(const std::vector<Matrix>& vectors, double keep_ratio) {
    if (vectors.empty()) throw InputError("ties merge: empty task vector set");
    std::vector<Matrix> trimmed;
    trimmed.reserve(vectors.size());
    for (const auto& v : vectors) {
        if (!v.same_shape(vectors.front())) throw ShapeError("ties merge: task vector shapes differ");
        trimmed.push_back(trim_top_k(v, keep_ratio));
    }
    Matrix merged(vectors.front().rows(), vectors.front().cols());
    for (std::size_t i = 0; i < merged.size(); ++i) {
        double total = 0.0;
        for (const auto& t : trimmed) total += t[i];
        // Zero sum elects positive.
        const bool positive = total >= 0.0;
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& t : trimmed) {
            const double v = t[i];
            if ((positive && v > 0.0) || (!positive && v < 0.0)) {
                sum += v;
                ++count;
            }
        }
        merged[i] = count == 0 ? 0.0 : sum / static_cast<double>(count);
    }
    return merged;
}

namespace {

Matrix finish(const TaskVectorSet& tv, Matrix merged, const MergeSpec& spec) {
    if (spec.scale != 1.0) merged *= spec.scale;
    return tv.base + merged;
}

void check_set(const TaskVectorSet& tv) {
    if (tv.vectors.empty()) throw InputError("merge: empty task vector set");
    for (const auto& v : tv.vectors)
        if (!v.same_shape(tv.base)) throw ShapeError("merge: task vector shape differs from base");
}

}  // namespace

Matrix ties_merge(const TaskVectorSet& tv, const MergeSpec& spec) {
    check_set(tv);
    spec.validate(tv.vectors.size());
    return finish(tv, ties_merge_vector(tv.vectors, spec.trim_keep_ratio), spec);
}

Matrix sign_merge(const TaskVectorSet& tv, const MergeSpec& spec) {
    check_set(tv);
    spec.validate(tv.vectors.size());
    return finish(tv, ties_merge_vector(tv.vectors, 1.0), spec);
}

Matrix linear_merge_vector(const std::vector<Matrix>& vectors, const std::vector<double>& weights) {
    if (vectors.empty()) throw InputError("linear merge: empty task vector set");
    const std::size_t k = vectors.size();
    if (!weights.empty() && weights.size() != k) {
        throw ConfigError("merge.weights has " + std::to_string(weights.size()) +
                          " entries for " + std::to_string(k) + " task vectors");
    }
    Matrix merged(vectors.front().rows(), vectors.front().cols());
    for (std::size_t i = 0; i < k; ++i) {
        if (!vectors[i].same_shape(merged)) throw ShapeError("linear merge: task vector shapes differ");
        const double w = weights.empty() ? 1.0 / static_cast<double>(k) : weights[i];
        const Matrix& t = vectors[i];
        for (std::size_t j = 0; j < merged.size(); ++j) merged[j] += w * t[j];
    }
    return merged;
}

Matrix linear_merge(const TaskVectorSet& tv, const MergeSpec& spec) {
    check_set(tv);
    MergeSpec checked = spec;
    checked.strategy = MergeStrategy::Linear;
    checked.validate(tv.vectors.size());
    return finish(tv, linear_merge_vector(tv.vectors, spec.weights), spec);
}

std::size_t sign_conflicts(const std::vector<Matrix>& vectors) {
    if (vectors.empty()) return 0;
    std::size_t conflicts = 0;
    for (std::size_t i = 0; i < vectors.front().size(); ++i) {
        bool pos = false, neg = false;
        for (const auto& v : vectors) {
            pos = pos || v[i] > 0.0;
            neg = neg || v[i] < 0.0;
        }
        conflicts += (pos && neg) ? 1 : 0;
    }
    return conflicts;
}

Matrix merge_side_memory(const Matrix& main_values, const std::vector<Matrix>& shard_values,
                         const MergeSpec& spec) {
    if (shard_values.empty()) throw InputError("merge_side_memory: no shard memories");
    TaskVectorSet tv = TaskVectorSet::from_models(main_values, shard_values);
    spec.validate(tv.vectors.size());
    Matrix shift;
    switch (spec.strategy) {
        case MergeStrategy::Ties: shift = ties_merge_vector(tv.vectors, spec.trim_keep_ratio); break;
        case MergeStrategy::Sign: shift = ties_merge_vector(tv.vectors, 1.0); break;
        case MergeStrategy::Linear: shift = linear_merge_vector(tv.vectors, spec.weights); break;
    }
    if (spec.scale != 1.0) shift *= spec.scale;
    // base + (w - base) may be an ulp away from w. Where the merged shift is
    // exactly one shard's shift, keep that shard's stored value.
    Matrix out(main_values.rows(), main_values.cols());
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = main_values[j] + shift[j];
        if (shift[j] == 0.0) continue;
        for (std::size_t i = 0; i < shard_values.size(); ++i) {
            if (tv.vectors[i][j] == shift[j]) {
                out[j] = shard_values[i][j];
                break;
            }
        }
    }
    return out;
}

}  // namespace wise
