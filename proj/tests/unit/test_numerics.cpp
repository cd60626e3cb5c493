#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "wise/errors.hpp"
#include "wise/numerics.hpp"

using namespace wise;

namespace {

// Triple-loop reference product, independent of the Eigen-backed kernel.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (auto& v : m.flat()) v = n(rng);
    return m;
}

void check_close(const Matrix& a, const Matrix& b, double tol) {
    REQUIRE(a.same_shape(b));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("matmul hand examples") {
    const Matrix m{{1, 2}, {3, 4}};
    CHECK(matmul(Matrix::identity(2), m) == m);
    CHECK(matmul(Matrix::identity(2), Matrix::identity(2)) == Matrix::identity(2));
    CHECK(matmul(m, Matrix{{5}, {6}}) == Matrix{{17}, {39}});
}

TEST_CASE("matmul variants agree with a naive product") {
    const Matrix a = random_matrix(5, 7, 1);
    const Matrix b = random_matrix(7, 3, 2);
    check_close(matmul(a, b), naive_matmul(a, b), 1e-12);
    check_close(matmul_tn(transpose(a), b), naive_matmul(a, b), 1e-12);
    check_close(matmul_nt(a, transpose(b)), naive_matmul(a, b), 1e-12);

    Matrix acc(5, 3, 1.0);
    matmul_tn_acc(transpose(a), b, acc);
    Matrix want = naive_matmul(a, b);
    for (auto& v : want.flat()) v += 1.0;
    check_close(acc, want, 1e-12);
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
    CHECK_THROWS_AS(Matrix(2, 2) + Matrix(2, 3), ShapeError);
    CHECK_THROWS_AS(hadamard(Matrix(1, 2), Matrix(2, 1)), ShapeError);
    CHECK_THROWS_AS((Matrix{{1, 2}, {3}}), ShapeError);
}

TEST_CASE("gelu") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(std::abs(gelu(20.0) - 20.0) < 1e-6);
    CHECK(std::abs(gelu(-20.0)) < 1e-6);
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double h = 1e-6;
        const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
        CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("softmax rows") {
    const Matrix s = softmax_rows(Matrix{{3, 3, 3, 3}});
    for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.25));
    // Large logits must not overflow.
    const Matrix big = softmax_rows(Matrix{{1000, 0}});
    CHECK(big.all_finite());
    CHECK(big[0] == doctest::Approx(1.0));
}

TEST_CASE("cross entropy") {
    Matrix logits(2, 3, -20.0);
    logits(0, 1) = 20.0;
    logits(1, 2) = 20.0;
    const std::vector<int> targets{1, 2};
    CHECK(cross_entropy(logits, targets) < 1e-6);

    const std::vector<int> ignored{kIgnoreTarget, kIgnoreTarget};
    CHECK(cross_entropy(logits, ignored) == 0.0);

    // Uniform logits give log(vocab).
    CHECK(cross_entropy(Matrix(1, 4), std::vector<int>{0}) == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(cross_entropy(Matrix(1, 4), std::vector<int>{4}), InputError);
    CHECK_THROWS_AS(cross_entropy(Matrix(2, 4), std::vector<int>{0}), InputError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Matrix logits = random_matrix(3, 5, 9);
    const std::vector<int> targets{4, kIgnoreTarget, 0};
    Matrix grad;
    cross_entropy_with_grad(logits, targets, grad);
    auto loss = [&](const Matrix& x) { return cross_entropy(x, targets); };
    CHECK(finite_diff_check(loss, logits, grad, 15, 3).max_rel_error < 1e-6);
    for (std::size_t c = 0; c < 5; ++c) CHECK(grad(1, c) == 0.0);
}

TEST_CASE("layer norm") {
    const Matrix gain(1, 3, 1.0), bias(1, 3, 0.0);
    const Matrix y = layer_norm(Matrix{{1, 2, 3}}, gain, bias);
    double mean = 0.0, var = 0.0;
    for (double v : y.flat()) mean += v / 3.0;
    for (double v : y.flat()) var += (v - mean) * (v - mean) / 3.0;
    CHECK(mean == doctest::Approx(0.0).scale(1.0));
    // Biased variance with the stabiliser: 1 / (1 + eps / var(x)).
    CHECK(var == doctest::Approx(1.0 / (1.0 + kLayerNormEps * 1.5)).epsilon(1e-10));
}

TEST_CASE("layer norm backward matches finite differences") {
    const Matrix x = random_matrix(4, 6, 11);
    const Matrix gain = random_matrix(1, 6, 12);
    const Matrix bias = random_matrix(1, 6, 13);
    const Matrix w = random_matrix(4, 6, 14);
    auto loss = [&](const Matrix& in) {
        const Matrix y = layer_norm(in, gain, bias);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
        return s;
    };
    LayerNormCache cache;
    layer_norm(x, gain, bias, &cache);
    const Matrix dx = layer_norm_backward(w, gain, cache);
    CHECK(finite_diff_check(loss, x, dx, 24, 5).max_rel_error < 1e-6);
}

TEST_CASE("finite_diff_check") {
    const Matrix w = random_matrix(4, 4, 21);
    auto half_sq = [](const Matrix& m) {
        const double n = frobenius_norm(m);
        return 0.5 * n * n;
    };
    CHECK(finite_diff_check(half_sq, w, w, 16).max_rel_error < 1e-6);

    auto constant = [](const Matrix&) { return 3.0; };
    const GradCheckReport zero = finite_diff_check(constant, w, Matrix(4, 4), 10);
    CHECK(zero.max_rel_error == 0.0);
    CHECK(zero.num_probes == 10);

    // A wrong gradient is caught.
    CHECK(finite_diff_check(half_sq, w, w * 2.0, 16).max_rel_error > 0.3);

    CHECK_THROWS_AS(finite_diff_check(half_sq, w, w, 0), InputError);
    CHECK_THROWS_AS(finite_diff_check(half_sq, w, Matrix(2, 2), 4), ShapeError);
}

TEST_CASE("bit equality distinguishes signed zero and matches NaN payloads") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(Matrix{{nan}}.bit_equal(Matrix{{nan}}));
    CHECK_FALSE(Matrix{{0.0}}.bit_equal(Matrix{{-0.0}}));
    CHECK_FALSE(Matrix{{1.0}}.bit_equal(Matrix{{1.0, 2.0}}));
}

TEST_CASE("require_finite") {
    CHECK_NOTHROW(require_finite(Matrix{{1, 2}}, "ok"));
    CHECK_THROWS_AS(require_finite(Matrix{{1, std::numeric_limits<double>::infinity()}}, "bad"),
                    NumericError);
}
