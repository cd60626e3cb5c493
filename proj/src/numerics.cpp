#include "wise/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Core>

#include "wise/errors.hpp"

namespace wise {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
    return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                    static_cast<Eigen::Index>(m.cols()));
}

MutMap view(Matrix& m) {
    return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
    }
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::row(std::span<const double> values) {
    Matrix m(1, values.size());
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Matrix::bit_equal(const Matrix& other) const {
    return same_shape(other) &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    if (out.size() == 0) return out;
    view(out).noalias() = view(a) * view(b);
    require_finite(out, "matmul");
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: " + shape_str(a) + "^T x " + shape_str(b));
    }
    Matrix out(a.cols(), b.cols());
    if (out.size() == 0) return out;
    view(out).noalias() = view(a).transpose() * view(b);
    require_finite(out, "matmul_tn");
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + shape_str(a) + " x " + shape_str(b) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    if (out.size() == 0) return out;
    view(out).noalias() = view(a) * view(b).transpose();
    require_finite(out, "matmul_nt");
    return out;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw ShapeError("matmul_tn_acc: " + shape_str(a) + "^T x " + shape_str(b) + " -> " +
                         shape_str(out));
    }
    if (out.size() == 0) return;
    view(out).noalias() += view(a).transpose() * view(b);
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.flat()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double v : m.flat()) best = std::max(best, std::abs(v));
    return best;
}

double gelu(double x) {
    const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
    const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    const double t = std::tanh(inner);
    const double d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
}

Matrix gelu(const Matrix& x) {
    Matrix out = x;
    for (auto& v : out.flat()) v = gelu(v);
    return out;
}

Matrix gelu_backward(const Matrix& x, const Matrix& upstream) {
    require_same_shape(x, upstream, "gelu_backward");
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_derivative(x[i]) * upstream[i];
    return out;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row_span(r);
        auto dst = out.row_span(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] - mx);
            sum += dst[c];
        }
        for (auto& v : dst) v /= sum;
    }
    return out;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                  LayerNormCache* cache) {
    const std::size_t n = x.cols();
    if (gain.rows() != 1 || gain.cols() != n || !gain.same_shape(bias)) {
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
    }
    Matrix out(x.rows(), n);
    if (cache) {
        cache->normalized = Matrix(x.rows(), n);
        cache->rstd.assign(x.rows(), 0.0);
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row_span(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < n; ++c) {
            const double xhat = (in[c] - mean) * rstd;
            if (cache) cache->normalized(r, c) = xhat;
            out(r, c) = xhat * gain[c] + bias[c];
        }
        if (cache) cache->rstd[r] = rstd;
    }
    return out;
}

Matrix layer_norm_backward(const Matrix& upstream, const Matrix& gain,
                           const LayerNormCache& cache, Matrix* d_gain, Matrix* d_bias) {
    require_same_shape(upstream, cache.normalized, "layer_norm_backward");
    const std::size_t n = upstream.cols();
    Matrix dx(upstream.rows(), n);
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < upstream.rows(); ++r) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double g = upstream(r, c);
            const double xhat = cache.normalized(r, c);
            if (d_gain) (*d_gain)[c] += g * xhat;
            if (d_bias) (*d_bias)[c] += g;
            dxhat[c] = g * gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xhat;
        }
        mean_dxhat /= static_cast<double>(n);
        mean_dxhat_xhat /= static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c) {
            dx(r, c) = cache.rstd[r] *
                       (dxhat[c] - mean_dxhat - cache.normalized(r, c) * mean_dxhat_xhat);
        }
    }
    return dx;
}

namespace {

double cross_entropy_impl(const Matrix& logits, std::span<const int> targets, Matrix* grad) {
    if (targets.size() != logits.rows()) {
        throw InputError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(logits.rows()) + " rows");
    }
    const std::size_t vocab = logits.cols();
    std::size_t count = 0;
    for (int t : targets) {
        if (t == kIgnoreTarget) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw InputError("cross_entropy: token " + std::to_string(t) +
                             " outside vocabulary of " + std::to_string(vocab));
        }
        ++count;
    }
    if (grad) *grad = Matrix(logits.rows(), vocab);
    if (count == 0) return 0.0;

    const double inv = 1.0 / static_cast<double>(count);
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int t = targets[r];
        if (t == kIgnoreTarget) continue;
        auto row = logits.row_span(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        const double log_z = mx + std::log(sum);
        total += log_z - row[static_cast<std::size_t>(t)];
        if (grad) {
            auto g = grad->row_span(r);
            for (std::size_t c = 0; c < vocab; ++c) g[c] = std::exp(row[c] - log_z) * inv;
            g[static_cast<std::size_t>(t)] -= inv;
        }
    }
    const double loss = total * inv;
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return loss;
}

}  // namespace

double cross_entropy(const Matrix& logits, std::span<const int> targets) {
    return cross_entropy_impl(logits, targets, nullptr);
}

double cross_entropy_with_grad(const Matrix& logits, std::span<const int> targets,
                               Matrix& grad) {
    return cross_entropy_impl(logits, targets, &grad);
}

GradCheckReport finite_diff_check(const std::function<double(const Matrix&)>& loss_fn,
                                  const Matrix& param, const Matrix& analytic_grad,
                                  std::size_t num_probes, std::uint64_t seed, double step) {
    if (num_probes == 0) throw InputError("finite_diff_check: num_probes must be >= 1");
    require_same_shape(param, analytic_grad, "finite_diff_check");
    if (param.size() == 0) throw InputError("finite_diff_check: empty parameter");

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, param.size() - 1);
    Matrix probe = param;
    GradCheckReport report;
    report.num_probes = num_probes;
    for (std::size_t p = 0; p < num_probes; ++p) {
        const std::size_t i = pick(rng);
        const double original = probe[i];
        probe[i] = original + step;
        const double plus = loss_fn(probe);
        probe[i] = original - step;
        const double minus = loss_fn(probe);
        probe[i] = original;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            throw NumericError("finite_diff_check: non-finite loss");
        }
        const double numeric = (plus - minus) / (2.0 * step);
        const double analytic = analytic_grad[i];
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        const double diff = std::abs(numeric - analytic);
        const double err = scale < 1e-8 ? diff : diff / scale;
        report.max_rel_error = std::max(report.max_rel_error, err);
    }
    return report;
}

}  // namespace wise
