#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace wise {

// Dense row-major matrix of doubles. Value type; copies are deep.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix row(std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row_span(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }

    void fill(double v);
    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    bool all_finite() const;

    // Bitwise equality (NaN payloads compare by bits, -0.0 != 0.0).
    bool bit_equal(const Matrix& other) const;
    friend bool operator==(const Matrix& a, const Matrix& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// out += a^T * b, used to accumulate weight gradients.
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);

Matrix transpose(const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);

// GeLU, tanh approximation.
double gelu(double x);
double gelu_derivative(double x);
Matrix gelu(const Matrix& x);
// Elementwise gelu'(x) * upstream.
Matrix gelu_backward(const Matrix& x, const Matrix& upstream);

Matrix softmax_rows(const Matrix& x);

struct LayerNormCache {
    Matrix normalized;             // (x - mean) * rstd, before gain/bias
    std::vector<double> rstd;      // per row
};

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalisation; gain and bias are 1 x cols.
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                  LayerNormCache* cache = nullptr);

// Gradient w.r.t. the layer-norm input. Accumulates into d_gain / d_bias when
// they are non-null.
Matrix layer_norm_backward(const Matrix& upstream, const Matrix& gain,
                           const LayerNormCache& cache, Matrix* d_gain = nullptr,
                           Matrix* d_bias = nullptr);

// Marks a position excluded from the loss.
inline constexpr int kIgnoreTarget = -1;

// Mean negative log-likelihood over rows whose target is not kIgnoreTarget.
// Returns 0 when no row is selected.
double cross_entropy(const Matrix& logits, std::span<const int> targets);

// Same loss, plus d loss / d logits.
double cross_entropy_with_grad(const Matrix& logits, std::span<const int> targets,
                               Matrix& grad);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t num_probes = 0;
};

// Compares central differences (step 1e-5) at `num_probes` sampled
// coordinates against `analytic_grad`. Relative error is
// |a - n| / max(|a|, |n|); when both magnitudes are below 1e-8 the absolute
// difference is used instead.
GradCheckReport finite_diff_check(const std::function<double(const Matrix&)>& loss_fn,
                                  const Matrix& param, const Matrix& analytic_grad,
                                  std::size_t num_probes, std::uint64_t seed = 0,
                                  double step = 1e-5);

}  // namespace wise
