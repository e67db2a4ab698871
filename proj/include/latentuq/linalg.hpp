#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latentuq/errors.hpp"

namespace luq::linalg {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit floats.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    [[nodiscard]] std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * cols_, cols_};
    }

    [[nodiscard]] std::vector<double>& data() { return data_; }
    [[nodiscard]] const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
/// C = A * B^T  (the hot path for batched layer evaluation)
Matrix matmul_transb(const Matrix& a, const Matrix& b);
/// C = A^T * B  (gradient and covariance accumulation)
Matrix matmul_transa(const Matrix& a, const Matrix& b);

/// Multivariate Gaussian with ridge-regularized covariance, stored through
/// its lower Cholesky factor.
struct GaussianDensity {
    Vector mean;
    Matrix chol_lower;      // L with L*L^T = cov + reg_lambda*I
    double log_det = 0.0;   // log det of the regularized covariance
    double reg_lambda = 0.0;
};

/// Cholesky factorization a = L*L^T for symmetric positive-definite input.
/// Throws NotPositiveDefinite when a pivot <= 0 turns up; the caller is
/// expected to regularize and retry.
Matrix cholesky(const Matrix& a);

/// Fits a Gaussian to the rows of `samples` (n x d). Mean is the column
/// average, covariance the unbiased 1/(n-1) estimator, and the factorization
/// runs on cov + reg_lambda*I with reg_lambda = max(ridge_scale*trace/d, 1e-10).
GaussianDensity fit_gaussian(const Matrix& samples, double ridge_scale);

/// Log-density of x under g: -(d*log 2pi + log_det + m^2)/2 where m^2 is the
/// squared Mahalanobis distance obtained by a triangular solve against the
/// stored factor. No matrix inverse is ever formed.
double log_density(const GaussianDensity& g, std::span<const double> x);

/// Linear-interpolation percentile on sorted values: fractional index
/// (n-1)*p/100. p must lie in [0, 100].
double percentile(std::span<const double> values, double p);

} // namespace luq::linalg
