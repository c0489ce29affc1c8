#include "hgmm/core_types.hpp"
#include "hgmm/splitting.hpp"
#include "test_support.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

using namespace hgmm;
using Catch::Approx;

TEST_CASE("matrix_sqrt of the identity is the identity", "[core_types]") {
    const Matrix s = matrix_sqrt(Matrix::Identity(2, 2));
    CHECK((s - Matrix::Identity(2, 2)).norm() < 1e-15);
}

TEST_CASE("matrix_sqrt of a diagonal matrix takes elementwise roots", "[core_types]") {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 4.0;
    a(1, 1) = 9.0;
    const Matrix s = matrix_sqrt(a);
    CHECK(s(0, 0) == Approx(2.0).epsilon(1e-15));
    CHECK(s(1, 1) == Approx(3.0).epsilon(1e-15));
    CHECK(s(0, 1) == 0.0);
    CHECK(s(1, 0) == 0.0);
}

TEST_CASE("matrix_sqrt reconstructs random SPD matrices and is lower triangular", "[core_types]") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = testing::random_spd(rng, 4);
        const Matrix s = matrix_sqrt(a);
        CHECK((s * s.transpose() - a).norm() / a.norm() < 1e-9);
        CHECK(s.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
    }
}

TEST_CASE("matrix_sqrt handles semidefinite inputs through the eigen fallback", "[core_types]") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix b = testing::random_matrix(rng, 4, 2);
        const Matrix a = symmetrize(b * b.transpose());
        const Matrix s = matrix_sqrt(a);
        CHECK((s * s.transpose() - a).norm() / a.norm() < 1e-9);
        CHECK(s.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
    }
    const Matrix zero = Matrix::Zero(3, 3);
    CHECK(matrix_sqrt(zero).norm() == 0.0);
}

TEST_CASE("matrix_sqrt rejects asymmetric and indefinite matrices", "[core_types]") {
    Matrix asym(2, 2);
    asym << 1.0, 0.5, 0.0, 1.0;
    REQUIRE_THROWS_AS(matrix_sqrt(asym), Error);
    try {
        (void)matrix_sqrt(asym);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotSymmetric);
    }
    Matrix indef(2, 2);
    indef << 1.0, 0.0, 0.0, -1.0;
    try {
        (void)matrix_sqrt(indef);
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::IndefiniteMatrix);
    }
}

TEST_CASE("gaussian_pdf matches the standard normal constants", "[core_types]") {
    CHECK(gaussian_pdf({Vector::Zero(1), Matrix::Identity(1, 1)}, Vector::Zero(1)) == Approx(0.3989422804).epsilon(1e-10));
    CHECK(gaussian_pdf({Vector::Zero(2), Matrix::Identity(2, 2)}, Vector::Zero(2)) == Approx(0.1591549431).epsilon(1e-10));
}

TEST_CASE("gaussian_pdf agrees with a numerically normalised kernel", "[core_types]") {
    const auto kernel = [](double x) { return std::exp(-(x - 1.0) * (x - 1.0) / 4.0); };
    const double z = testing::trapezoid(kernel, -40.0, 40.0, 200001);
    const double expected = kernel(3.0) / z;
    CHECK(gaussian_pdf({Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 2.0)}, Vector::Constant(1, 3.0)) ==
          Approx(expected).epsilon(1e-9));
}

TEST_CASE("gaussian_pdf integrates to one under adaptive quadrature", "[core_types]") {
    using boost::math::quadrature::gauss_kronrod;
    const Gaussian g1{Vector::Constant(1, 0.7), Matrix::Constant(1, 1, 0.3)};
    const double i1 = gauss_kronrod<double, 31>::integrate([&](double x) { return gaussian_pdf(g1, Vector::Constant(1, x)); },
                                                           -20.0, 20.0, 15, 1e-12);
    CHECK(std::abs(i1 - 1.0) < 1e-6);

    Gaussian g2;
    g2.mean = Eigen::Vector2d(0.5, -0.2);
    g2.covariance = (Matrix(2, 2) << 1.0, 0.4, 0.4, 0.5).finished();
    const auto inner = [&](double x) {
        return gauss_kronrod<double, 31>::integrate([&](double y) { return gaussian_pdf(g2, Eigen::Vector2d(x, y)); }, -12.0, 12.0, 10,
                                                    1e-10);
    };
    const double i2 = gauss_kronrod<double, 31>::integrate(inner, -12.0, 12.0, 10, 1e-10);
    CHECK(std::abs(i2 - 1.0) < 1e-6);
}

TEST_CASE("gaussian_pdf rejects mismatched dimensions", "[core_types]") {
    try {
        (void)gaussian_pdf({Vector::Zero(2), Matrix::Identity(2, 2)}, Vector::Zero(3));
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
}

TEST_CASE("gaussian_pdf regularises a singular covariance", "[core_types]") {
    Matrix c = Matrix::Zero(2, 2);
    c(0, 0) = 1.0;
    c(1, 1) = 0.0;
    const double p = gaussian_pdf({Vector::Zero(2), c}, Eigen::Vector2d(0.1, 1.0));
    CHECK(std::isfinite(p));
}

TEST_CASE("isd_terms of a Gaussian against itself is zero", "[core_types]") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index n = 1 + trial % 4;
        const Gaussian g{testing::random_vector(rng, n), testing::random_spd(rng, n)};
        const IsdTerms t = isd_terms(g, {{1.0, g}});
        CHECK(std::abs(t.isd) < 1e-12);
        CHECK(t.isd >= -1e-12);
    }
}

TEST_CASE("isd_terms matches trapezoid quadrature of the squared difference", "[core_types]") {
    const Gaussian target{Vector::Zero(1), Matrix::Identity(1, 1)};
    const Gaussian wide{Vector::Zero(1), Matrix::Constant(1, 1, 1.5)};
    const IsdTerms t = isd_terms(target, {{1.0, wide}});
    const auto sq = [&](double x) {
        const double d = gaussian_pdf(target, Vector::Constant(1, x)) - gaussian_pdf(wide, Vector::Constant(1, x));
        return d * d;
    };
    const double q = testing::trapezoid(sq, -10.0, 10.0, 100000);
    CHECK(std::abs(t.isd - q) < 1e-8);
    CHECK(t.j11 == Approx(1.0 / std::sqrt(4.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("isd_terms matches 2-D quadrature for a mixture", "[core_types]") {
    Gaussian target{Eigen::Vector2d(0.2, -0.1), (Matrix(2, 2) << 1.0, 0.3, 0.3, 0.8).finished()};
    std::vector<WeightedGaussian> mix{
        {0.4, {Eigen::Vector2d(-0.5, 0.0), (Matrix(2, 2) << 0.5, 0.1, 0.1, 0.7).finished()}},
        {0.6, {Eigen::Vector2d(0.6, -0.2), (Matrix(2, 2) << 0.6, 0.0, 0.0, 0.6).finished()}},
    };
    const IsdTerms t = isd_terms(target, mix);
    const auto sq = [&](double x, double y) {
        const Vector p = Eigen::Vector2d(x, y);
        const double d = gaussian_pdf(target, p) - mixture_pdf(mix, p);
        return d * d;
    };
    CHECK(std::abs(t.isd - testing::trapezoid2(sq, -8.0, 8.0, 801)) < 1e-8);
    CHECK(std::abs(t.isd - isd({{1.0, target}}, mix)) < 1e-14);
}

TEST_CASE("isd_terms recovers the stored objective of a canonical split", "[core_types]") {
    const CanonicalSplit split = optimize_canonical_split(3, 0.5);
    std::vector<WeightedGaussian> mix;
    for (int i = 0; i < 3; ++i) {
        mix.push_back({split.weights[static_cast<std::size_t>(i)],
                       {Vector::Constant(1, split.offset(i)), Matrix::Constant(1, 1, split.axis_variance())}});
    }
    const IsdTerms t = isd_terms({Vector::Zero(1), Matrix::Identity(1, 1)}, mix);
    CHECK(std::abs(t.isd - split.isd) < 1e-10);
}

TEST_CASE("isd_terms rejects mismatched dimensions", "[core_types]") {
    const Gaussian a{Vector::Zero(2), Matrix::Identity(2, 2)};
    const Gaussian b{Vector::Zero(1), Matrix::Identity(1, 1)};
    CHECK_THROWS_AS(isd_terms(a, {{1.0, b}}), Error);
}

TEST_CASE("mixture_moments of a single mixand is the mixand", "[core_types]") {
    HybridMixture mix;
    mix.mixands.push_back({1.0, "a", {Eigen::Vector2d(1.0, 2.0), (Matrix(2, 2) << 2.0, 0.1, 0.1, 1.0).finished()}});
    const Gaussian m = mixture_moments(mix);
    CHECK((m.mean - mix.mixands[0].gaussian.mean).norm() < 1e-15);
    CHECK((m.covariance - mix.mixands[0].gaussian.covariance).norm() < 1e-15);
}

TEST_CASE("mixture_moments applies the law of total variance", "[core_types]") {
    HybridMixture mix;
    mix.mixands.push_back({0.5, "a", {Vector::Constant(1, -1.0), Matrix::Identity(1, 1)}});
    mix.mixands.push_back({0.5, "b", {Vector::Constant(1, 1.0), Matrix::Identity(1, 1)}});
    const Gaussian m = mixture_moments(mix);
    CHECK(std::abs(m.mean(0)) < 1e-15);
    CHECK(m.covariance(0, 0) == Approx(2.0).epsilon(1e-15));
    CHECK_THROWS_AS(mixture_moments(HybridMixture{}), Error);
}

TEST_CASE("mixture_moments agrees with a Monte-Carlo estimate", "[core_types]") {
    std::mt19937_64 rng(4);
    HybridMixture mix;
    std::uniform_real_distribution<double> uw(0.1, 1.0);
    for (int i = 0; i < 5; ++i) mix.mixands.push_back({uw(rng), "a", {testing::random_vector(rng, 2, 2.0), testing::random_spd(rng, 2)}});
    normalize(mix);
    const Gaussian m = mixture_moments(mix);

    std::vector<double> cumulative;
    double acc = 0.0;
    for (const auto& c : mix.mixands) cumulative.push_back(acc += c.weight);
    std::vector<Matrix> roots;
    for (const auto& c : mix.mixands) roots.push_back(matrix_sqrt(c.gaussian.covariance));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01;
    constexpr int samples = 1000000;
    Vector sum = Vector::Zero(2);
    Matrix sum_sq = Matrix::Zero(2, 2);
    std::vector<Vector> draws;
    draws.reserve(samples);
    for (int s = 0; s < samples; ++s) {
        const double r = u01(rng);
        std::size_t j = 0;
        while (j + 1 < cumulative.size() && r >= cumulative[j]) ++j;
        const Vector x = mix.mixands[j].gaussian.mean + roots[j] * Eigen::Vector2d(n01(rng), n01(rng));
        sum += x;
        draws.push_back(x);
    }
    const Vector mc_mean = sum / samples;
    for (const auto& x : draws) sum_sq += (x - mc_mean) * (x - mc_mean).transpose();
    const Matrix mc_cov = sum_sq / (samples - 1);
    for (int i = 0; i < 2; ++i) {
        const double se_mean = std::sqrt(m.covariance(i, i) / samples);
        CHECK(std::abs(mc_mean(i) - m.mean(i)) < 3.0 * se_mean);
        double fourth = 0.0;
        for (const auto& x : draws) fourth += std::pow(x(i) - mc_mean(i), 4);
        fourth /= samples;
        const double se_var = std::sqrt((fourth - mc_cov(i, i) * mc_cov(i, i)) / samples);
        CHECK(std::abs(mc_cov(i, i) - m.covariance(i, i)) < 3.0 * se_var);
    }
}

TEST_CASE("normalize makes weights sum to one exactly", "[core_types]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uw(1e-3, 10.0);
    for (int trial = 0; trial < 100; ++trial) {
        HybridMixture mix;
        for (int i = 0; i < 1 + trial % 17; ++i) mix.mixands.push_back({uw(rng), "a", {Vector::Zero(1), Matrix::Identity(1, 1)}});
        normalize(mix);
        double s = 0.0;
        for (const auto& m : mix.mixands) s += m.weight;
        CHECK(std::abs(s - 1.0) <= 1e-15);
    }
}

TEST_CASE("apply_weight_floor drops negligible mixands and renormalises", "[core_types]") {
    HybridMixture mix;
    mix.mixands.push_back({0.5, "a", {Vector::Zero(1), Matrix::Identity(1, 1)}});
    mix.mixands.push_back({1e-8, "b", {Vector::Zero(1), Matrix::Identity(1, 1)}});
    mix.mixands.push_back({0.5, "c", {Vector::Zero(1), Matrix::Identity(1, 1)}});
    apply_weight_floor(mix);
    REQUIRE(mix.size() == 2);
    CHECK(std::abs(total_weight(mix) - 1.0) < 1e-15);
    CHECK(mix.mixands[1].discrete == "c");
}

TEST_CASE("validate_mixture enforces the mixture invariants", "[core_types]") {
    HybridMixture mix;
    mix.mixands.push_back({0.6, "a", {Vector::Zero(1), Matrix::Identity(1, 1)}});
    CHECK_THROWS_AS(validate_mixture(mix), Error);
    mix.mixands.push_back({0.4, "b", {Vector::Zero(2), Matrix::Identity(2, 2)}});
    CHECK_THROWS_AS(validate_mixture(mix), Error);
    mix.mixands[1].gaussian = {Vector::Zero(1), Matrix::Identity(1, 1)};
    CHECK_NOTHROW(validate_mixture(mix));
    mix.mixands[1].gaussian.covariance(0, 0) = -1.0;
    CHECK_THROWS_AS(validate_mixture(mix), Error);
}
