#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "latentuq/linalg.hpp"
#include "oracles.hpp"

using namespace luq;
using linalg::GaussianDensity;
using linalg::Matrix;
using linalg::Vector;

namespace {

Matrix from_square(const oracles::Square& s) {
    Matrix m(s.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) m(i, j) = s[i][j];
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

Matrix reconstruct(const Matrix& lower) {
    Matrix product(lower.rows(), lower.rows());
    for (std::size_t i = 0; i < lower.rows(); ++i)
        for (std::size_t j = 0; j < lower.rows(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < lower.rows(); ++k) sum += lower(i, k) * lower(j, k);
            product(i, j) = sum;
        }
    return product;
}

GaussianDensity standard_gaussian_2d() {
    GaussianDensity g;
    g.mean = {0.0, 0.0};
    g.chol_lower = Matrix(2, 2);
    g.chol_lower(0, 0) = g.chol_lower(1, 1) = 1.0;
    g.log_det = 0.0;
    return g;
}

} // namespace

TEST_SUITE("linalg") {

TEST_CASE("cholesky of the identity is the identity") {
    Matrix eye(2, 2);
    eye(0, 0) = eye(1, 1) = 1.0;
    const Matrix lower = linalg::cholesky(eye);
    CHECK(max_abs_diff(lower, eye) == 0.0);
}

TEST_CASE("cholesky of [[9]] is [[3]]") {
    Matrix a(1, 1);
    a(0, 0) = 9.0;
    CHECK(linalg::cholesky(a)(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("cholesky factor multiplies back to the input") {
    Matrix a(2, 2);
    a(0, 0) = 4.0;
    a(0, 1) = a(1, 0) = 2.0;
    a(1, 1) = 3.0;
    const Matrix lower = linalg::cholesky(a);
    CHECK(max_abs_diff(reconstruct(lower), a) < 1e-12);
}

TEST_CASE("cholesky rejects non-positive-definite input") {
    Matrix a(2, 2);
    a(0, 0) = 1.0;
    a(0, 1) = a(1, 0) = 2.0;
    a(1, 1) = 1.0;
    CHECK_THROWS_AS(linalg::cholesky(a), NotPositiveDefinite);
}

TEST_CASE("cholesky recovers a random lower-triangular factor") {
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> diag(0.5, 2.0);
    std::uniform_real_distribution<double> off(-1.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t d = 1 + gen() % 6;
        Matrix lower(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < i; ++j) lower(i, j) = off(gen);
            lower(i, i) = diag(gen);
        }
        const Matrix recovered = linalg::cholesky(reconstruct(lower));
        CHECK(max_abs_diff(recovered, lower) < 1e-10);
    }
}

TEST_CASE("fit_gaussian on identical samples hits the variance floor") {
    const Vector v = {0.25, -1.5, 3.0};
    Matrix samples(5, 3);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) samples(i, j) = v[j];
    const GaussianDensity g = linalg::fit_gaussian(samples, 1e-6);
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.mean[j] == doctest::Approx(v[j]));
    CHECK(g.reg_lambda == doctest::Approx(1e-10));
    // covariance reconstructs to reg_lambda * I
    const Matrix cov = reconstruct(g.chol_lower);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(cov(i, j) == doctest::Approx(i == j ? 1e-10 : 0.0).epsilon(1e-12));
}

TEST_CASE("fit_gaussian matches the unbiased estimator on the unit square") {
    Matrix samples(4, 2);
    samples(0, 0) = 0.0; samples(0, 1) = 0.0;
    samples(1, 0) = 1.0; samples(1, 1) = 1.0;
    samples(2, 0) = 0.0; samples(2, 1) = 1.0;
    samples(3, 0) = 1.0; samples(3, 1) = 0.0;
    const GaussianDensity g = linalg::fit_gaussian(samples, 1e-6);
    CHECK(g.mean[0] == doctest::Approx(0.5));
    CHECK(g.mean[1] == doctest::Approx(0.5));
    // raw covariance diag(1/3, 1/3) by direct summation; ridge is
    // 1e-6 * trace/d = 1e-6/3
    const double lambda = 1e-6 * (2.0 / 3.0) / 2.0;
    CHECK(g.reg_lambda == doctest::Approx(lambda).epsilon(1e-12));
    const Matrix cov = reconstruct(g.chol_lower);
    CHECK(cov(0, 0) == doctest::Approx(1.0 / 3.0 + lambda).epsilon(1e-12));
    CHECK(cov(1, 1) == doctest::Approx(1.0 / 3.0 + lambda).epsilon(1e-12));
    CHECK(cov(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fit_gaussian rejects a single sample") {
    Matrix samples(1, 2);
    CHECK_THROWS_AS(linalg::fit_gaussian(samples, 1e-6), DegenerateSampleCount);
}

TEST_CASE("fit_gaussian never fails on rank-deficient blocks") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    SUBCASE("fewer samples than dimensions") {
        Matrix samples(3, 8);
        for (double& v : samples.data()) v = u(gen);
        const GaussianDensity g = linalg::fit_gaussian(samples, 1e-6);
        CHECK(std::isfinite(g.log_det));
    }
    SUBCASE("constant coordinate") {
        Matrix samples(20, 3);
        for (std::size_t i = 0; i < 20; ++i) {
            samples(i, 0) = u(gen);
            samples(i, 1) = 0.0; // dead unit
            samples(i, 2) = u(gen);
        }
        const GaussianDensity g = linalg::fit_gaussian(samples, 1e-6);
        CHECK(std::isfinite(linalg::log_density(g, Vector{0.5, 0.0, 0.5})));
    }
}

TEST_CASE("log_density of the standard Gaussian at its mean") {
    const GaussianDensity g = standard_gaussian_2d();
    CHECK(linalg::log_density(g, Vector{0.0, 0.0}) ==
          doctest::Approx(-1.8378770664).epsilon(1e-9));
}

TEST_CASE("log_density one unit from the mean") {
    const GaussianDensity g = standard_gaussian_2d();
    CHECK(linalg::log_density(g, Vector{1.0, 0.0}) ==
          doctest::Approx(-1.8378770664 - 0.5).epsilon(1e-9));
}

TEST_CASE("log_density rejects mismatched dimensions") {
    const GaussianDensity g = standard_gaussian_2d();
    CHECK_THROWS_AS(linalg::log_density(g, Vector{1.0, 2.0, 3.0}), DimensionMismatch);
}

TEST_CASE("log_density matches the explicit-inverse oracle") {
    std::mt19937_64 gen(123);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t d = 1 + gen() % 5;
        const oracles::Square cov = oracles::random_spd(d, gen);
        std::vector<double> mean(d);
        std::vector<double> x(d);
        for (std::size_t i = 0; i < d; ++i) {
            mean[i] = u(gen);
            x[i] = u(gen);
        }
        GaussianDensity g;
        g.mean = mean;
        g.chol_lower = linalg::cholesky(from_square(cov));
        g.log_det = 0.0;
        for (std::size_t i = 0; i < d; ++i) g.log_det += 2.0 * std::log(g.chol_lower(i, i));
        const double expected = oracles::gaussian_log_density(mean, cov, x);
        CHECK(linalg::log_density(g, x) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("log_density is maximized at the mean") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const oracles::Square cov = oracles::random_spd(4, gen);
    GaussianDensity g;
    g.mean = {0.5, -1.0, 2.0, 0.0};
    g.chol_lower = linalg::cholesky(from_square(cov));
    for (std::size_t i = 0; i < 4; ++i) g.log_det += 2.0 * std::log(g.chol_lower(i, i));
    const double at_mean = linalg::log_density(g, g.mean);
    for (int rep = 0; rep < 200; ++rep) {
        Vector x(4);
        for (double& v : x) v = u(gen);
        CHECK(linalg::log_density(g, x) <= at_mean);
    }
}

TEST_CASE("percentile interpolates linearly") {
    std::vector<double> values(100);
    for (int i = 0; i < 100; ++i) values[static_cast<std::size_t>(i)] = i + 1;
    CHECK(linalg::percentile(values, 50.0) == doctest::Approx(50.5));
}

TEST_CASE("percentile boundaries are min and max") {
    const std::vector<double> values = {3.5, -2.0, 7.0, 0.25};
    CHECK(linalg::percentile(values, 0.0) == -2.0);
    CHECK(linalg::percentile(values, 100.0) == 7.0);
}

TEST_CASE("percentile rejects empty input") {
    CHECK_THROWS_AS(linalg::percentile(std::vector<double>{}, 50.0), EmptyInput);
}

TEST_CASE("percentile is monotone in p") {
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::vector<double> values(37);
    for (double& v : values) v = u(gen);
    double prev = linalg::percentile(values, 0.0);
    for (int p = 1; p <= 100; ++p) {
        const double cur = linalg::percentile(values, static_cast<double>(p));
        CHECK(cur >= prev);
        prev = cur;
    }
}

} // TEST_SUITE
