#include "wise/side_memory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wise/errors.hpp"

namespace wise {

SideMemory init_side(const Matrix& main_values, std::size_t k, double rho, std::uint64_t seed) {
    if (k == 0) throw ConfigError("side memory needs k >= 1 shards");
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("mask ratio rho must lie in (0, 1]");
    SideMemory side;
    side.values = main_values;
    side.round_base = main_values;
    side.masks = gen_masks(main_values.rows(), main_values.cols(), k, rho, seed);
    side.shard_values.assign(k, main_values);
    side.shard_fill.assign(k, 0);
    return side;
}

double routing_activation_diff(const Matrix& diff, const Matrix& activation_rows,
                               Aggregation agg, Matrix* grad, double scale) {
    if (activation_rows.cols() != diff.rows()) {
        throw ShapeError("routing_activation: activation has " +
                         std::to_string(activation_rows.cols()) + " columns, memory has " +
                         std::to_string(diff.rows()) + " rows");
    }
    if (activation_rows.rows() == 0) throw ShapeError("routing_activation: no activation rows");
    if (grad && !grad->same_shape(diff)) throw ShapeError("routing_activation: gradient shape");

    const std::size_t first = agg == Aggregation::LastToken ? activation_rows.rows() - 1 : 0;
    const std::size_t n = activation_rows.rows() - first;
    Matrix rows = activation_rows;
    if (first > 0) {
        rows = Matrix(1, activation_rows.cols());
        auto src = activation_rows.row_span(first);
        std::copy(src.begin(), src.end(), rows.data());
    }
    Matrix shift = matmul(rows, diff);  // n x d_model
    double total = 0.0;
    bool any_grad = false;
    for (std::size_t t = 0; t < n; ++t) {
        auto s = shift.row_span(t);
        double sq = 0.0;
        for (double v : s) sq += v * v;
        const double norm = std::sqrt(sq);
        total += norm;
        // Reuse the shift rows as d norm / d shift, scaled.
        const double coef = norm > 0.0 ? scale / (static_cast<double>(n) * norm) : 0.0;
        any_grad = any_grad || coef != 0.0;
        for (auto& v : s) v *= coef;
    }
    if (grad && any_grad) matmul_tn_acc(rows, shift, *grad);
    return total / static_cast<double>(n);
}

double routing_activation(const Matrix& main_values, const Matrix& side_values,
                          const Matrix& activation_rows, Aggregation agg) {
    if (!main_values.same_shape(side_values)) {
        throw ShapeError("routing_activation: side memory shape differs from main memory");
    }
    return routing_activation_diff(side_values - main_values, activation_rows, agg);
}

double routing_activation(const Matrix& main_values, const SideMemory& side,
                          const Matrix& activation_rows, Aggregation agg) {
    return routing_activation(main_values, side.values, activation_rows, agg);
}

void update_epsilon(SideMemory& side, double delta_edit) {
    if (!(delta_edit >= 0.0)) throw InputError("update_epsilon: activation must be >= 0");
    side.epsilon = std::min(side.epsilon, delta_edit);
}

RoutingDecision route(const Matrix& main_values, std::span<const SideMemory> memories,
                      const Matrix& activation_rows, Aggregation agg) {
    if (memories.empty()) throw ConfigError("route: no side memories");
    RoutingDecision best;
    best.activation = -1.0;
    for (std::size_t m = 0; m < memories.size(); ++m) {
        const double act = routing_activation(main_values, memories[m], activation_rows, agg);
        if (act > best.activation) {
            best.activation = act;
            best.chosen_memory = m;
        }
    }
    best.use_side = best.activation > memories[best.chosen_memory].epsilon;
    return best;
}

}  // namespace wise
