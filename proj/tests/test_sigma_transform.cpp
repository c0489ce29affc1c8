#include "hgmm/models/scalar.hpp"
#include "hgmm/sigma_transform.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace hgmm;
using Catch::Approx;

namespace {

ProcessNoise noise_of(const Matrix& c) { return ProcessNoise{c}; }

} // namespace

TEST_CASE("unit sigma set with one noise dimension", "[sigma_transform]") {
    const Gaussian g{Vector::Zero(1), Matrix::Identity(1, 1)};
    const SigmaSet s = generate_sigma_points(g, noise_of(Matrix::Identity(1, 1)), 1.0);
    REQUIRE(s.count() == 5);
    CHECK(s.gamma == Approx(std::sqrt(3.0)).epsilon(1e-15));
    const double r3 = std::sqrt(3.0);
    const double chi[5] = {0.0, r3, -r3, 0.0, 0.0};
    const double ups[5] = {0.0, 0.0, 0.0, r3, -r3};
    for (int j = 0; j < 5; ++j) {
        CHECK(s.state_points(0, j) == Approx(chi[j]).margin(1e-15));
        CHECK(s.noise_points(0, j) == Approx(ups[j]).margin(1e-15));
    }
}

TEST_CASE("two-state sigma set with lambda zero", "[sigma_transform]") {
    Gaussian g{Eigen::Vector2d(1.0, 2.0), Matrix::Zero(2, 2)};
    g.covariance(0, 0) = 4.0;
    g.covariance(1, 1) = 1.0;
    const SigmaSet s = generate_sigma_points(g, noise_of(Matrix::Identity(1, 1)), 0.0);
    // 1 + 2 n_x + 2 n_v points with gamma = sqrt(3).
    REQUIRE(s.count() == 7);
    const double r3 = std::sqrt(3.0);
    CHECK(s.gamma == Approx(r3).epsilon(1e-15));
    CHECK((s.state_points.col(0) - g.mean).norm() == 0.0);
    CHECK((s.state_points.col(1) - Eigen::Vector2d(1.0 + 2.0 * r3, 2.0)).norm() < 1e-14);
    CHECK((s.state_points.col(2) - Eigen::Vector2d(1.0, 2.0 + r3)).norm() < 1e-14);
    CHECK((s.state_points.col(3) - Eigen::Vector2d(1.0 - 2.0 * r3, 2.0)).norm() < 1e-14);
    CHECK((s.state_points.col(4) - Eigen::Vector2d(1.0, 2.0 - r3)).norm() < 1e-14);
    CHECK((s.state_points.col(5) - g.mean).norm() == 0.0);
    CHECK((s.state_points.col(6) - g.mean).norm() == 0.0);
    CHECK(s.noise_points(0, 5) == Approx(r3).epsilon(1e-15));
    CHECK(s.noise_points(0, 6) == Approx(-r3).epsilon(1e-15));
    for (int j = 0; j < 5; ++j) CHECK(s.noise_points(0, j) == 0.0);
}

TEST_CASE("sigma-set invariants hold for random inputs", "[sigma_transform]") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index nx = 1 + trial % 4;
        const Eigen::Index nv = trial % 3;
        const Gaussian g{testing::random_vector(rng, nx), testing::random_spd(rng, nx)};
        const ProcessNoise q = nv > 0 ? noise_of(testing::random_spd(rng, nv)) : ProcessNoise::none();
        const double lambda = default_lambda(nx, nv) + 0.5 * (trial % 3);
        const SigmaSet s = generate_sigma_points(g, q, lambda);
        CHECK(s.count() == 1 + 2 * nx + 2 * nv);
        CHECK((s.state_points.col(0) - g.mean).norm() == 0.0);
        for (Eigen::Index j = 0; j <= 2 * nx; ++j) CHECK(s.noise_points.col(j).norm() == 0.0);
        const RecombinationWeights w = recombination_weights(s);
        CHECK(std::abs(w.mean_weights.sum() - 1.0) < 1e-12);
        const Gaussian r = recombine(s.state_points, w);
        CHECK((r.mean - g.mean).norm() < 1e-9 * (1.0 + g.mean.norm()));
        CHECK((r.covariance - g.covariance).norm() < 1e-9 * g.covariance.norm());
    }
}

TEST_CASE("recombination weights follow the printed values", "[sigma_transform]") {
    const RecombinationWeights w = recombination_weights(2, 1, 0.5);
    const double n = 3.0;
    CHECK(w.mean_weights(0) == Approx(0.5 / (0.5 + n)).epsilon(1e-15));
    CHECK(w.cov_weights(0) == Approx(0.5 / (0.5 + n) + 2.0).epsilon(1e-15));
    for (Eigen::Index j = 1; j < w.mean_weights.size(); ++j) {
        CHECK(w.mean_weights(j) == Approx(1.0 / (2.0 * (0.5 + n))).epsilon(1e-15));
        CHECK(w.cov_weights(j) == Approx(1.0 / (2.0 * (0.5 + n))).epsilon(1e-15));
    }
    CHECK(default_lambda(1, 0) == 2.0);
    CHECK(default_lambda(4, 2) == -3.0);
}

TEST_CASE("lambda at or below -(n_x + n_v) is rejected", "[sigma_transform]") {
    const Gaussian g{Vector::Zero(2), Matrix::Identity(2, 2)};
    CHECK_THROWS_AS(generate_sigma_points(g, ProcessNoise::none(), -2.0), Error);
    CHECK_NOTHROW(generate_sigma_points(g, ProcessNoise::none(), -1.5));
}

TEST_CASE("propagation through the identity returns the points", "[sigma_transform]") {
    std::mt19937_64 rng(11);
    const Gaussian g{testing::random_vector(rng, 3), testing::random_spd(rng, 3)};
    const SigmaSet s = generate_sigma_points(g, noise_of(testing::random_spd(rng, 2)), 0.0);
    const Matrix out = propagate_points(s, "a", [](const DiscreteState&, const Vector& x, const Vector&) { return x; });
    CHECK((out - s.state_points).norm() == 0.0);
}

TEST_CASE("linear dynamics propagate columnwise", "[sigma_transform]") {
    std::mt19937_64 rng(12);
    const Matrix a = testing::random_matrix(rng, 3, 3);
    const Matrix b = testing::random_matrix(rng, 3, 2);
    const Gaussian g{testing::random_vector(rng, 3), testing::random_spd(rng, 3)};
    const SigmaSet s = generate_sigma_points(g, noise_of(testing::random_spd(rng, 2)), 1.0);
    const Matrix out =
        propagate_points(s, "a", [&](const DiscreteState&, const Vector& x, const Vector& v) -> Vector { return a * x + b * v; });
    CHECK((out - (a * s.state_points + b * s.noise_points)).norm() < 1e-12);
}

TEST_CASE("UNGM propagation of a noise-free sigma set matches direct evaluation", "[sigma_transform]") {
    const Gaussian g{Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.25)};
    const SigmaSet s = generate_sigma_points(g, ProcessNoise::none(), default_lambda(1, 0));
    REQUIRE(s.count() == 3);
    const Matrix out = propagate_points(s, "a", [](const DiscreteState&, const Vector& x, const Vector&) {
        return Vector::Constant(1, models::ungm_step(x(0), 0));
    });
    const double gamma = std::sqrt(3.0);
    const double pts[3] = {1.0, 1.0 + gamma * 0.5, 1.0 - gamma * 0.5};
    for (int j = 0; j < 3; ++j) {
        const double x = pts[j];
        CHECK(out(0, j) == Approx(0.3 * x + x / (1.0 + x * x) + 1.0).epsilon(1e-14));
    }
}

TEST_CASE("identical propagated points recombine to a point mass", "[sigma_transform]") {
    const Matrix pts = Eigen::Vector2d(1.5, -2.0).replicate(1, 5);
    const Gaussian r = recombine(pts, recombination_weights(2, 0, 1.0));
    CHECK((r.mean - Eigen::Vector2d(1.5, -2.0)).norm() < 1e-14);
    CHECK(r.covariance.norm() < 1e-14);
}

TEST_CASE("unscented propagation is exact for linear systems", "[sigma_transform]") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index nx = 1 + trial % 4;
        const Eigen::Index nv = 1 + trial % 2;
        const Matrix a = testing::random_matrix(rng, nx, nx);
        const Matrix b = testing::random_matrix(rng, nx, nv);
        const Matrix q = testing::random_spd(rng, nv);
        const Gaussian g{testing::random_vector(rng, nx), testing::random_spd(rng, nx)};
        const SigmaSet s = generate_sigma_points(g, noise_of(q), 3.0 - static_cast<double>(nx + nv) + 0.5);
        const Matrix out =
            propagate_points(s, "a", [&](const DiscreteState&, const Vector& x, const Vector& v) -> Vector { return a * x + b * v; });
        const Gaussian r = recombine(out, recombination_weights(s));
        const Vector mean = a * g.mean;
        const Matrix cov = a * g.covariance * a.transpose() + b * q * b.transpose();
        CHECK((r.mean - mean).norm() <= 1e-8 * std::max(1.0, mean.norm()));
        CHECK((r.covariance - cov).norm() <= 1e-8 * cov.norm());
        CHECK((r.covariance - r.covariance.transpose()).norm() == 0.0);
    }
}

TEST_CASE("recombined covariance is clamped to be positive semidefinite", "[sigma_transform]") {
    // With a negative centre weight the raw weighted covariance can be indefinite.
    Matrix pts(1, 3);
    pts << 0.0, 1.0, 1.0;
    RecombinationWeights w;
    w.mean_weights = Eigen::Vector3d(1.0, 0.0, 0.0);
    w.cov_weights = Eigen::Vector3d(1.0, -1.0, -1.0);
    const Gaussian r = recombine(pts, w);
    CHECK(r.covariance(0, 0) >= 0.0);
}

TEST_CASE("non-finite propagated moments are a model failure", "[sigma_transform]") {
    Matrix pts(1, 3);
    pts << 0.0, 1e300, -1e300;
    try {
        (void)recombine(pts, recombination_weights(1, 0, 2.0));
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ModelEvaluationFailure);
    }
}
