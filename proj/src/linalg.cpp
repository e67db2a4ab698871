#include "latentuq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace luq::linalg {

namespace {

constexpr double kMinRidge = 1e-10;

void check_symmetric(const Matrix& a) {
    if (a.rows() != a.cols())
        throw DimensionMismatch("cholesky: matrix is " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ", expected square");
    double max_abs = 0.0;
    double max_skew = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = i; j < a.cols(); ++j) {
            max_abs = std::max(max_abs, std::abs(a(i, j)));
            max_skew = std::max(max_skew, std::abs(a(i, j) - a(j, i)));
        }
    }
    if (max_skew > 1e-9 * std::max(1.0, max_abs))
        throw BadParameter("cholesky: input is not symmetric");
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw DimensionMismatch("Matrix: data length " + std::to_string(data_.size()) +
                                " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    // i-k-j order: unit-stride access on b and c
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = &c(i, 0);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* bk = &b(k, 0);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Matrix matmul_transb(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw DimensionMismatch("matmul_transb: inner dimensions differ");
    Matrix c(a.rows(), b.rows());
    const std::size_t depth = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = &a(i, 0);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = &b(j, 0);
            // four independent accumulators: same result order every run,
            // but the chains pipeline
            double s0 = 0.0;
            double s1 = 0.0;
            double s2 = 0.0;
            double s3 = 0.0;
            std::size_t k = 0;
            for (; k + 4 <= depth; k += 4) {
                s0 += ai[k] * bj[k];
                s1 += ai[k + 1] * bj[k + 1];
                s2 += ai[k + 2] * bj[k + 2];
                s3 += ai[k + 3] * bj[k + 3];
            }
            double sum = (s0 + s1) + (s2 + s3);
            for (; k < depth; ++k) sum += ai[k] * bj[k];
            c(i, j) = sum;
        }
    }
    return c;
}

Matrix matmul_transa(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw DimensionMismatch("matmul_transa: inner dimensions differ");
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* ak = &a(k, 0);
        const double* bk = &b(k, 0);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = &c(i, 0);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

Matrix cholesky(const Matrix& a) {
    check_symmetric(a);
    const std::size_t d = a.rows();
    Matrix lower(d, d);
    for (std::size_t j = 0; j < d; ++j) {
        double diag = a(j, j);
        const double* lj = &lower(j, 0);
        for (std::size_t k = 0; k < j; ++k) diag -= lj[k] * lj[k];
        if (diag <= 0.0)
            throw NotPositiveDefinite("cholesky: pivot " + std::to_string(diag) +
                                      " at column " + std::to_string(j));
        const double ljj = std::sqrt(diag);
        lower(j, j) = ljj;
        for (std::size_t i = j + 1; i < d; ++i) {
            double sum = a(i, j);
            const double* li = &lower(i, 0);
            for (std::size_t k = 0; k < j; ++k) sum -= li[k] * lj[k];
            lower(i, j) = sum / ljj;
        }
    }
    return lower;
}

GaussianDensity fit_gaussian(const Matrix& samples, double ridge_scale) {
    const std::size_t n = samples.rows();
    const std::size_t d = samples.cols();
    if (n < 2)
        throw DegenerateSampleCount("fit_gaussian: need at least 2 samples, got " +
                                    std::to_string(n));
    if (d < 1) throw DimensionMismatch("fit_gaussian: zero-dimensional samples");

    GaussianDensity g;
    g.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &samples(i, 0);
        for (std::size_t j = 0; j < d; ++j) g.mean[j] += row[j];
    }
    for (double& m : g.mean) m /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered(i, j) = samples(i, j) - g.mean[j];

    Matrix cov = matmul_transa(centered, centered);
    const double inv_nm1 = 1.0 / static_cast<double>(n - 1);
    for (double& v : cov.data()) v *= inv_nm1;
    // exact symmetry for the factorization
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) cov(j, i) = cov(i, j);

    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov(i, i);
    double lambda = std::max(ridge_scale * trace / static_cast<double>(d), kMinRidge);

    // lambda*I makes the matrix PD in exact arithmetic; escalate on the rare
    // numerical failure
    for (;;) {
        Matrix reg = cov;
        for (std::size_t i = 0; i < d; ++i) reg(i, i) += lambda;
        try {
            g.chol_lower = cholesky(reg);
            break;
        } catch (const NotPositiveDefinite&) {
            lambda *= 10.0;
        }
    }
    g.reg_lambda = lambda;
    g.log_det = 0.0;
    for (std::size_t i = 0; i < d; ++i) g.log_det += std::log(g.chol_lower(i, i));
    g.log_det *= 2.0;
    return g;
}

double log_density(const GaussianDensity& g, std::span<const double> x) {
    const std::size_t d = g.mean.size();
    if (x.size() != d)
        throw DimensionMismatch("log_density: x has dim " + std::to_string(x.size()) +
                                ", Gaussian has dim " + std::to_string(d));
    // forward solve L z = (x - mean); m^2 = |z|^2
    double m2 = 0.0;
    Vector z(d);
    for (std::size_t i = 0; i < d; ++i) {
        double sum = x[i] - g.mean[i];
        const double* li = &g.chol_lower(i, 0);
        for (std::size_t k = 0; k < i; ++k) sum -= li[k] * z[k];
        z[i] = sum / li[i];
        m2 += z[i] * z[i];
    }
    constexpr double log_2pi = 1.8378770664093454836;
    return -0.5 * (static_cast<double>(d) * log_2pi + g.log_det + m2);
}

double percentile(std::span<const double> values, double p) {
    if (values.empty()) throw EmptyInput("percentile: empty input");
    if (!(p >= 0.0 && p <= 100.0))
        throw BadParameter("percentile: p = " + std::to_string(p) + " outside [0, 100]");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double h = static_cast<double>(sorted.size() - 1) * p / 100.0;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

} // namespace luq::linalg
