#include "hgmm/anticipation.hpp"
#include "hgmm/evaluation.hpp"
#include "hgmm/models/bicycle.hpp"
#include "hgmm/models/scalar.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <map>
#include <random>

using namespace hgmm;

namespace {

/// x' = A x + B v with a single hypothesis.
class LinearModel final : public DynamicsModel {
public:
    LinearModel(Matrix a, Matrix b, Matrix q) : a_(std::move(a)), b_(std::move(b)), noise_{std::move(q)} {}
    [[nodiscard]] Eigen::Index state_dim() const override { return a_.rows(); }
    [[nodiscard]] const ProcessNoise& noise() const override { return noise_; }
    [[nodiscard]] std::vector<Transition> discrete_successors(const DiscreteState& alpha, const Gaussian&, int) const override {
        return {{alpha, 1.0}};
    }
    [[nodiscard]] Vector propagate(const DiscreteState&, const Vector& x, const Vector& v, int) const override {
        return a_ * x + b_ * v;
    }

    Matrix a_;
    Matrix b_;

private:
    ProcessNoise noise_;
};

/// Hypothesis "fork" branches to "a", "b", "c" (or to the configured list); every other hypothesis
/// persists. The continuous map is hypothesis dependent and nonlinear.
class BranchModel final : public DynamicsModel {
public:
    explicit BranchModel(std::vector<DiscreteState> branches = {"a", "b", "c"}, bool fail_on_b = false)
        : branches_(std::move(branches)), fail_on_b_(fail_on_b) {}
    [[nodiscard]] Eigen::Index state_dim() const override { return 2; }
    [[nodiscard]] const ProcessNoise& noise() const override { return noise_; }
    [[nodiscard]] std::vector<Transition> discrete_successors(const DiscreteState& alpha, const Gaussian&, int) const override {
        if (alpha == "dead") return {};
        if (alpha != "fork") return {{alpha, 1.0}};
        std::vector<Transition> out;
        for (const auto& b : branches_) out.push_back({b, 1.0 / static_cast<double>(branches_.size())});
        return out;
    }
    [[nodiscard]] Vector propagate(const DiscreteState& alpha, const Vector& x, const Vector& v, int) const override {
        if (fail_on_b_ && alpha == "b") throw Error(ErrorKind::ModelEvaluationFailure, "undefined input");
        const double turn = alpha == "a" ? 0.3 : (alpha == "c" ? -0.3 : 0.0);
        Vector out(2);
        out(0) = x(0) + std::cos(x(1) + turn) + 0.1 * v(0);
        out(1) = x(1) + 0.5 * std::sin(x(0)) + turn;
        return out;
    }

private:
    std::vector<DiscreteState> branches_;
    bool fail_on_b_;
    ProcessNoise noise_{Matrix::Constant(1, 1, 0.04)};
};

HybridMixture single(const DiscreteState& alpha, const Vector& mean, const Matrix& cov) {
    HybridMixture mix;
    mix.mixands.push_back({1.0, alpha, {mean, cov}});
    return mix;
}

const SplitLibrary& library() {
    static const SplitLibrary lib = build_split_library({3, 5}, {0.3, 0.5});
    return lib;
}

EngineConfig config(double e_res_max, double horizon = 1.0) {
    EngineConfig cfg;
    cfg.e_res_max = e_res_max;
    cfg.horizon = horizon;
    cfg.dt = 0.1;
    return cfg;
}

double frame_distance(const HybridMixture& a, const HybridMixture& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.mixands[i].discrete != b.mixands[i].discrete) return std::numeric_limits<double>::infinity();
        d = std::max(d, std::abs(a.mixands[i].weight - b.mixands[i].weight));
        d = std::max(d, (a.mixands[i].gaussian.mean - b.mixands[i].gaussian.mean).lpNorm<Eigen::Infinity>());
        d = std::max(d, (a.mixands[i].gaussian.covariance - b.mixands[i].gaussian.covariance).lpNorm<Eigen::Infinity>());
    }
    return d;
}

} // namespace

TEST_CASE("linear dynamics reproduce the Kalman prediction without splitting", "[anticipation]") {
    std::mt19937_64 rng(50);
    const Matrix a = Matrix::Identity(3, 3) + 0.1 * testing::random_matrix(rng, 3, 3);
    const Matrix b = testing::random_matrix(rng, 3, 2);
    const Matrix q = testing::random_spd(rng, 2);
    const LinearModel model(a, b, q);
    const Gaussian g{testing::random_vector(rng, 3), testing::random_spd(rng, 3)};

    EngineConfig cfg = config(1e-8, 0.5);
    cfg.scaling = ResidualScaling::raw;
    std::vector<StepStats> stats;
    const auto frames = anticipate(single("a", g.mean, g.covariance), model, cfg, library(), &stats);
    REQUIRE(frames.size() == 5);
    Vector mean = g.mean;
    Matrix cov = g.covariance;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        mean = a * mean;
        cov = a * cov * a.transpose() + b * q * b.transpose();
        REQUIRE(frames[k].size() == 1);
        CHECK(stats[k].splits == 0);
        CHECK((frames[k].mixands[0].gaussian.mean - mean).norm() < 1e-9 * std::max(1.0, mean.norm()));
        CHECK((frames[k].mixands[0].gaussian.covariance - cov).norm() < 1e-9 * cov.norm());
        CHECK(frames[k].time_index == static_cast<int>(k) + 1);
    }
}

TEST_CASE("one-step zero-noise linear prediction", "[anticipation]") {
    const Matrix a = (Matrix(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
    const LinearModel model(a, Matrix::Zero(2, 1), Matrix::Zero(1, 1));
    const Gaussian g{Eigen::Vector2d(1.0, 2.0), Matrix::Identity(2, 2)};
    const auto frames = anticipate(single("a", g.mean, g.covariance), model, config(0.1, 0.1), library());
    REQUIRE(frames.size() == 1);
    CHECK((frames[0].mixands[0].gaussian.mean - a * g.mean).norm() < 1e-12);
    CHECK((frames[0].mixands[0].gaussian.covariance - a * a.transpose()).norm() < 1e-12);
}

TEST_CASE("single successors only relabel hypotheses", "[anticipation]") {
    const BranchModel model;
    HybridMixture mix = single("a", Eigen::Vector2d(0.0, 1.0), Matrix::Identity(2, 2));
    mix.mixands.push_back({0.0, "b", {Eigen::Vector2d(1.0, 1.0), Matrix::Identity(2, 2)}});
    mix.mixands[0].weight = 0.6;
    mix.mixands[1].weight = 0.4;
    const HybridMixture out = step_discrete(mix, model);
    REQUIRE(out.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(out.mixands[i].weight == mix.mixands[i].weight);
        CHECK(out.mixands[i].discrete == mix.mixands[i].discrete);
        CHECK(out.mixands[i].gaussian.mean == mix.mixands[i].gaussian.mean);
    }
}

TEST_CASE("a three-way branch copies the mixand with a third of its weight", "[anticipation]") {
    const BranchModel model;
    const HybridMixture mix = single("fork", Eigen::Vector2d(0.5, 0.2), Matrix::Identity(2, 2));
    const HybridMixture out = step_discrete(mix, model);
    REQUIRE(out.size() == 3);
    for (const auto& m : out.mixands) {
        CHECK(m.weight == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(m.gaussian.mean == mix.mixands[0].gaussian.mean);
        CHECK(m.gaussian.covariance == mix.mixands[0].gaussian.covariance);
    }
    CHECK(out.mixands[0].discrete == "a");
    CHECK(out.mixands[2].discrete == "c");
}

TEST_CASE("two mixands with one two-way branch become three", "[anticipation]") {
    const BranchModel model({"a", "c"});
    HybridMixture mix;
    mix.mixands.push_back({0.7, "b", {Eigen::Vector2d(0.0, 0.0), Matrix::Identity(2, 2)}});
    mix.mixands.push_back({0.3, "fork", {Eigen::Vector2d(1.0, 0.0), Matrix::Identity(2, 2)}});
    const HybridMixture out = step_discrete(mix, model);
    REQUIRE(out.size() == 3);
    CHECK(std::abs(total_weight(out) - 1.0) < 1e-15);
    CHECK(out.mixands[1].weight == Catch::Approx(0.15).epsilon(1e-15));
    CHECK(out.mixands[2].weight == Catch::Approx(0.15).epsilon(1e-15));
}

TEST_CASE("a hypothesis without successors is an error", "[anticipation]") {
    const BranchModel model;
    try {
        (void)step_discrete(single("dead", Vector::Zero(2), Matrix::Identity(2, 2)), model);
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoSuccessor);
    }
}

TEST_CASE("an infinite threshold is exactly a per-hypothesis unscented predictor", "[anticipation]") {
    const BranchModel model;
    EngineConfig cfg = config(std::numeric_limits<double>::infinity(), 1.0);
    cfg.reduction.max_mixands = 10;
    const HybridMixture initial = single("fork", Eigen::Vector2d(0.5, 0.2), 0.3 * Matrix::Identity(2, 2));
    const auto frames = anticipate(initial, model, cfg, SplitLibrary{});
    REQUIRE(frames.size() == 10);

    // Reference: three independent unscented predictors, one per branch.
    const double lambda = default_lambda(2, 1);
    std::map<DiscreteState, Gaussian> ref;
    for (const auto& alpha : {"a", "b", "c"}) ref[alpha] = initial.mixands[0].gaussian;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        REQUIRE(frames[k].size() == 3);
        for (const auto& m : frames[k].mixands) {
            Gaussian& g = ref[m.discrete];
            const SigmaSet s = generate_sigma_points(g, model.noise(), lambda);
            const Matrix post = propagate_points(s, m.discrete, [&](const DiscreteState& a, const Vector& x, const Vector& v) {
                return model.propagate(a, x, v, 0);
            });
            g = recombine(post, recombination_weights(s));
            CHECK((m.gaussian.mean - g.mean).norm() <= 1e-12);
            CHECK((m.gaussian.covariance - g.covariance).norm() <= 1e-12);
            CHECK(m.weight == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("splitting improves the UNGM prediction", "[anticipation]") {
    const auto model = models::make_ungm_model(0);
    const Gaussian prior{Vector::Constant(1, 0.5), Matrix::Identity(1, 1)};
    EngineConfig cfg;
    cfg.dt = 1.0;
    cfg.horizon = 1.0;
    cfg.scaling = ResidualScaling::raw;
    cfg.reduction.max_mixands = 1000;

    models::MappedGaussianDensity truth = models::ungm_truth_density(prior, 0);
    const auto truth_fn = [&](double y) { return truth(y); };

    cfg.e_res_max = std::numeric_limits<double>::infinity();
    const auto plain = anticipate(single("a", prior.mean, prior.covariance), *model, cfg, library());
    cfg.e_res_max = 0.05;
    std::vector<StepStats> stats;
    const auto split = anticipate(single("a", prior.mean, prior.covariance), *model, cfg, library(), &stats);
    CHECK(stats[0].splits > 0);
    CHECK(split[0].size() > 1);
    const double kld_plain = numerical_kld(continuous_part(plain[0]), truth_fn);
    const double kld_split = numerical_kld(continuous_part(split[0]), truth_fn);
    CHECK(kld_split < kld_plain);
}

TEST_CASE("mixture invariants hold through every stage of a step", "[anticipation]") {
    const BranchModel model;
    EngineConfig cfg = config(0.02, 0.5);
    cfg.reduction.max_mixands = 6;
    HybridMixture current = single("fork", Eigen::Vector2d(0.5, 0.2), 0.5 * Matrix::Identity(2, 2));
    const SplitLibrary& lib = library();
    bool any_split = false;
    for (int k = 0; k < 5; ++k) {
        const HybridMixture d = step_discrete(current, model);
        CHECK(d.size() >= current.size());
        CHECK(std::abs(total_weight(d) - 1.0) < 1e-12);
        StepStats stats;
        const HybridMixture c = step_continuous(d, model, cfg, lib, &stats);
        any_split = any_split || stats.splits > 0;
        CHECK(c.size() >= d.size());
        CHECK(std::abs(total_weight(c) - 1.0) < 1e-12);
        CHECK(c.time_index == d.time_index + 1);
        current = anticipation_step(current, model, cfg, lib);
        CHECK(current.size() <= 6);
        CHECK(std::abs(total_weight(current) - 1.0) < 1e-12);
        validate_mixture(current);
    }
    CHECK(any_split);
}

TEST_CASE("the depth cap bounds recursive splitting", "[anticipation]") {
    const BranchModel model;
    EngineConfig cfg = config(1e-12, 0.1);
    cfg.max_split_depth = 2;
    cfg.split_n = 3;
    cfg.split_sigma = 0.5;
    cfg.reduction.max_mixands = 1000;
    std::vector<std::string> warnings;
    const auto previous = set_log_sink([&](const std::string& w) { warnings.push_back(w); });
    std::vector<StepStats> stats;
    const auto frames = anticipate(single("b", Eigen::Vector2d(0.5, 0.2), Matrix::Identity(2, 2)), model, cfg, library(), &stats);
    set_log_sink(previous);
    CHECK(frames[0].size() == 9);
    CHECK(stats[0].splits == 4);
    CHECK(stats[0].forced_recombinations == 9);
    CHECK_FALSE(warnings.empty());
}

TEST_CASE("sequential runs are bit-identical and parallel runs agree", "[anticipation]") {
    const auto scenario = models::make_scenario("intersection");
    const models::BicycleModel model(scenario.network, scenario.params);
    EngineConfig cfg = scenario.config;
    cfg.horizon = 2.0;
    const SplitLibrary lib = build_split_library({cfg.split_n}, {cfg.split_sigma});
    const auto a = anticipate(scenario.initial, model, cfg, lib);
    const auto b = anticipate(scenario.initial, model, cfg, lib);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(frame_distance(a[k], b[k]) == 0.0);

    cfg.threads = 4;
    const auto c = anticipate(scenario.initial, model, cfg, lib);
    REQUIRE(c.size() == a.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(frame_distance(a[k], c[k]) <= 1e-9);
}

TEST_CASE("frame count follows the horizon", "[anticipation]") {
    const BranchModel model;
    const auto frames = anticipate(single("a", Vector::Zero(2), Matrix::Identity(2, 2)), model, config(0.1, 3.5), library());
    CHECK(frames.size() == 35);
    EngineConfig bad = config(0.1, 0.35);
    bad.dt = 0.2;
    CHECK_THROWS_AS(bad.steps(), Error);
    CHECK_THROWS_AS(anticipate(single("a", Vector::Zero(3), Matrix::Identity(3, 3)), model, config(0.1), library()), Error);
}

TEST_CASE("missing split entries are reported", "[anticipation]") {
    const BranchModel model;
    EngineConfig cfg = config(0.1);
    cfg.split_n = 7;
    try {
        (void)anticipate(single("a", Vector::Zero(2), Matrix::Identity(2, 2)), model, cfg, library());
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingSplit);
    }
}

TEST_CASE("model failures carry the mixand identity", "[anticipation]") {
    const BranchModel model({"a", "b", "c"}, true);
    try {
        (void)anticipate(single("fork", Vector::Zero(2), Matrix::Identity(2, 2)), model, config(0.1), library());
        FAIL("expected an exception");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ModelEvaluationFailure);
        const std::string what = e.what();
        CHECK(what.find("mixand 1") != std::string::npos);
        CHECK(what.find("'b'") != std::string::npos);
    }
}
