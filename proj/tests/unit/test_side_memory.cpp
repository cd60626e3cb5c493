#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "wise/errors.hpp"
#include "wise/side_memory.hpp"

using namespace wise;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (auto& v : m.flat()) v = n(rng);
    return m;
}

// Direct evaluation of mean_t ||a_t (W' - W)||, written without shared helpers.
double oracle_activation(const Matrix& main, const Matrix& side, const Matrix& acts) {
    double total = 0.0;
    for (std::size_t t = 0; t < acts.rows(); ++t) {
        double sq = 0.0;
        for (std::size_t c = 0; c < main.cols(); ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < main.rows(); ++r) s += acts(t, r) * (side(r, c) - main(r, c));
            sq += s * s;
        }
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(acts.rows());
}

// Side memory whose values are main + shift, so its activation on a row e_0
// is |shift|.
SideMemory memory_with_activation(const Matrix& main, double shift, double epsilon) {
    SideMemory s = init_side(main, 2, 0.5, 1);
    s.values(0, 0) += shift;
    s.epsilon = epsilon;
    return s;
}

}  // namespace

TEST_CASE("init_side") {
    const Matrix main = random_matrix(8, 4, 1);
    const SideMemory s = init_side(main, 3, 0.25, 9);
    CHECK(s.values.bit_equal(main));
    CHECK(s.round_base.bit_equal(main));
    CHECK(s.k() == 3);
    CHECK(s.shard_values.size() == 3);
    for (const auto& w : s.shard_values) CHECK(w.bit_equal(main));
    CHECK(std::isinf(s.epsilon));
    CHECK(s.active_shard == 0);
    CHECK(s.edits_recorded == 0);
    for (const auto& m : s.masks) {
        double ones = 0.0;
        for (double v : m.flat()) ones += v;
        CHECK(ones == 8.0);
    }
    CHECK_THROWS_AS(init_side(main, 0, 0.2, 0), ConfigError);
    CHECK_THROWS_AS(init_side(main, 2, 0.0, 0), ConfigError);
    CHECK_THROWS_AS(init_side(main, 2, 1.5, 0), ConfigError);
}

TEST_CASE("full-ratio single mask is all ones") {
    const SideMemory s = init_side(Matrix(5, 3), 1, 1.0, 0);
    for (double v : s.masks[0].flat()) CHECK(v == 1.0);
}

TEST_CASE("routing activation hand values") {
    const Matrix main = random_matrix(4, 3, 2);
    const Matrix acts = random_matrix(5, 4, 3);
    CHECK(routing_activation(main, main, acts) == 0.0);

    Matrix side = main;
    side(0, 0) += 3.0;
    side(0, 2) -= 4.0;
    Matrix e1(1, 4);
    e1(0, 0) = 1.0;
    CHECK(routing_activation(main, side, e1) == doctest::Approx(5.0));

    const Matrix other = main + random_matrix(4, 3, 4);
    CHECK(routing_activation(main, other, acts) ==
          doctest::Approx(oracle_activation(main, other, acts)).epsilon(1e-12));
}

TEST_CASE("routing activation properties") {
    const Matrix main = random_matrix(6, 3, 5);
    const Matrix side = main + random_matrix(6, 3, 6);
    const Matrix acts = random_matrix(7, 6, 7);
    const double base = routing_activation(main, side, acts);
    CHECK(base >= 0.0);
    CHECK(routing_activation(main, side, acts * 2.0) == doctest::Approx(2.0 * base));

    // Shuffling rows leaves the mean unchanged.
    Matrix shuffled(acts.rows(), acts.cols());
    for (std::size_t r = 0; r < acts.rows(); ++r) {
        auto src = acts.row_span(acts.rows() - 1 - r);
        std::copy(src.begin(), src.end(), shuffled.row_span(r).begin());
    }
    CHECK(routing_activation(main, side, shuffled) == doctest::Approx(base).epsilon(1e-12));

    // Last-token aggregation only reads the final row.
    Matrix last(1, acts.cols());
    auto src = acts.row_span(acts.rows() - 1);
    std::copy(src.begin(), src.end(), last.data());
    CHECK(routing_activation(main, side, acts, Aggregation::LastToken) ==
          doctest::Approx(routing_activation(main, side, last)).epsilon(1e-12));

    CHECK_THROWS_AS(routing_activation(main, Matrix(2, 2), acts), ShapeError);
    CHECK_THROWS_AS(routing_activation(main, side, Matrix(2, 5)), ShapeError);
    CHECK_THROWS_AS(routing_activation(main, side, Matrix(0, 6)), ShapeError);
}

TEST_CASE("routing activation gradient matches finite differences") {
    const Matrix main = random_matrix(6, 4, 8);
    const Matrix side = main + random_matrix(6, 4, 9);
    const Matrix acts = random_matrix(5, 6, 10);
    for (Aggregation agg : {Aggregation::Mean, Aggregation::LastToken}) {
        Matrix grad(6, 4);
        routing_activation_diff(side - main, acts, agg, &grad, 1.0);
        auto f = [&](const Matrix& w) { return routing_activation(main, w, acts, agg); };
        CHECK(finite_diff_check(f, side, grad, 24, 1).max_rel_error < 1e-6);
    }
    // A zero difference contributes no gradient.
    Matrix grad(6, 4);
    routing_activation_diff(Matrix(6, 4), acts, Aggregation::Mean, &grad, 1.0);
    CHECK(max_abs(grad) == 0.0);
}

TEST_CASE("epsilon is a running minimum") {
    SideMemory s = init_side(Matrix(2, 2), 1, 1.0, 0);
    update_epsilon(s, 15.2);
    CHECK(s.epsilon == 15.2);
    s.epsilon = 12.0;
    update_epsilon(s, 15.2);
    CHECK(s.epsilon == 12.0);

    SideMemory r = init_side(Matrix(2, 2), 1, 1.0, 0);
    double prev = r.epsilon;
    for (double d : {18.0, 14.0, 16.0}) {
        update_epsilon(r, d);
        CHECK(r.epsilon <= prev);
        prev = r.epsilon;
    }
    CHECK(r.epsilon == 14.0);
    CHECK_THROWS_AS(update_epsilon(r, -1.0), InputError);
    CHECK_THROWS_AS(update_epsilon(r, std::nan("")), InputError);
}

TEST_CASE("route") {
    const Matrix main(3, 2);
    Matrix e0(1, 3);
    e0(0, 0) = 1.0;

    std::vector<SideMemory> one{memory_with_activation(main, 20.0, 12.0)};
    RoutingDecision d = route(main, one, e0);
    CHECK(d.use_side);
    CHECK(d.chosen_memory == 0);
    CHECK(d.activation == doctest::Approx(20.0));

    one[0] = memory_with_activation(main, 5.0, 12.0);
    CHECK_FALSE(route(main, one, e0).use_side);

    // Equal to the threshold stays on the main memory.
    one[0] = memory_with_activation(main, 12.0, 12.0);
    CHECK_FALSE(route(main, one, e0).use_side);

    std::vector<SideMemory> two{memory_with_activation(main, 8.0, 10.0),
                                memory_with_activation(main, 19.0, 15.0)};
    d = route(main, two, e0);
    CHECK(d.chosen_memory == 1);
    CHECK(d.use_side);

    // The top-1 memory decides alone even when another memory would pass.
    two = {memory_with_activation(main, 9.0, 1.0), memory_with_activation(main, 10.0, 50.0)};
    d = route(main, two, e0);
    CHECK(d.chosen_memory == 1);
    CHECK_FALSE(d.use_side);

    // Ties go to the lowest index.
    two = {memory_with_activation(main, 7.0, 1.0), memory_with_activation(main, 7.0, 1.0)};
    CHECK(route(main, two, e0).chosen_memory == 0);

    CHECK_THROWS_AS(route(main, std::vector<SideMemory>{}, e0), ConfigError);
}

TEST_CASE("a fresh memory never routes") {
    const Matrix main = random_matrix(4, 3, 11);
    const std::vector<SideMemory> mems{init_side(main, 2, 0.2, 3)};
    const RoutingDecision d = route(main, mems, random_matrix(3, 4, 12));
    CHECK(d.activation == 0.0);
    CHECK_FALSE(d.use_side);
}
