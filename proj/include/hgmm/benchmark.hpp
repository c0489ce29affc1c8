#pragma once

#include "hgmm/anticipation.hpp"
#include "hgmm/evaluation.hpp"
#include "hgmm/linearity.hpp"
#include "hgmm/models/scalar.hpp"
#include "hgmm/sigma_transform.hpp"
#include "hgmm/splitting.hpp"

#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace hgmm {

/// Randomised one-step propagation benchmark on a scalar map: priors N(m, s2) with m ~ U(-2, 2)
/// and s2 ~ U(0, 2), each propagated once and compared to the exact propagated density.
struct BenchmarkConfig {
    std::string model = "ungm";
    int samples = 100;
    std::uint64_t seed = 7;
    /// Sigma-point scaling; defaults to 3 - n_x.
    std::optional<double> lambda;
    int kld_points = 20000;
    KldDirection direction = KldDirection::approx_weighted;
    /// Split arms (N, sigma): the prior is split once along its axis before propagation.
    std::vector<std::pair<int, double>> splits;
    /// Optional engine arm: recursive splitting gated by this raw e_res threshold.
    std::optional<double> engine_e_res_max;
    int engine_split_n = 5;
    double engine_split_sigma = 0.3;
};

struct PriorSample {
    double mean = 0.0;
    double variance = 0.0;
    /// Raw linearity residual of the unsplit prior.
    double e_res = 0.0;
    double kld_no_split = 0.0;
    std::vector<double> kld_split;
    std::optional<double> kld_engine;
    std::size_t engine_mixands = 0;
};

struct ArmSummary {
    std::string label;
    double mean = 0.0;
    double std = 0.0;
};

struct BenchmarkReport {
    std::vector<PriorSample> samples;
    ArmSummary no_split;
    std::vector<ArmSummary> split_arms;
    std::optional<ArmSummary> engine_arm;
    /// Pearson correlation of e_res with the no-split KLD.
    double pearson_e_res_kld = 0.0;
};

inline models::ScalarMap benchmark_map(const std::string& model) {
    if (model == "ungm") return models::ungm_map(0);
    if (model == "cubic") return models::cubic_map();
    throw Error(ErrorKind::InvalidArgument, "unknown benchmark model '" + model + "' (expected ungm or cubic)");
}

inline std::vector<Gaussian> draw_priors(int samples, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> mean_dist(-2.0, 2.0);
    std::uniform_real_distribution<double> var_dist(0.0, 2.0);
    std::vector<Gaussian> out;
    out.reserve(static_cast<std::size_t>(std::max(samples, 0)));
    for (int i = 0; i < samples; ++i) {
        const double m = mean_dist(rng);
        double v = var_dist(rng);
        while (!(v > 0.0)) v = var_dist(rng);
        out.push_back({Vector::Constant(1, m), Matrix::Constant(1, 1, v)});
    }
    return out;
}

/// Single-Gaussian unscented propagation through a noise-free scalar map.
inline Gaussian unscented_scalar(const Gaussian& prior, const models::ScalarMap& map, double lambda) {
    const SigmaSet s = generate_sigma_points(prior, ProcessNoise::none(), lambda);
    Matrix post(1, s.count());
    for (Eigen::Index j = 0; j < s.count(); ++j) post(0, j) = map.value(s.state_points(0, j));
    return recombine(post, recombination_weights(s));
}

/// Raw linearity residual of the prior's sigma points under the map.
inline double scalar_e_res(const Gaussian& prior, const models::ScalarMap& map, double lambda) {
    const SigmaSet s = generate_sigma_points(prior, ProcessNoise::none(), lambda);
    Matrix post(1, s.count());
    for (Eigen::Index j = 0; j < s.count(); ++j) post(0, j) = map.value(s.state_points(0, j));
    LinearityOptions opts;
    opts.scaling = ResidualScaling::raw;
    return assess_linearity(s.state_points, post, opts).e_res;
}

/// Split the prior once with `split`, then propagate each child with the unscented transform.
inline std::vector<WeightedGaussian> split_once_scalar(const Gaussian& prior, const models::ScalarMap& map, const CanonicalSplit& split,
                                                       double lambda) {
    const HybridMixand parent{1.0, "", prior};
    std::vector<WeightedGaussian> out;
    for (const auto& c : apply_split(parent, Vector::Ones(1), split)) out.push_back({c.weight, unscented_scalar(c.gaussian, map, lambda)});
    return out;
}

inline ArmSummary summarize(std::string label, const std::vector<double>& values) {
    return {std::move(label), sample_mean(values), sample_std(values)};
}

/// Required split library keys for a configuration.
inline std::vector<std::pair<int, double>> required_splits(const BenchmarkConfig& cfg) {
    auto keys = cfg.splits;
    if (cfg.engine_e_res_max) keys.emplace_back(cfg.engine_split_n, cfg.engine_split_sigma);
    return keys;
}

inline BenchmarkReport run_benchmark(const BenchmarkConfig& cfg, const SplitLibrary& lib) {
    if (cfg.samples < 3) throw Error(ErrorKind::InvalidArgument, "benchmark: samples must be at least 3");
    const models::ScalarMap map = benchmark_map(cfg.model);
    const double lambda = cfg.lambda.value_or(default_lambda(1, 0));
    std::vector<const CanonicalSplit*> splits;
    for (const auto& [n, s] : cfg.splits) splits.push_back(&lib.at(n, s));

    std::unique_ptr<models::ScalarMapModel> engine_model;
    EngineConfig engine_cfg;
    if (cfg.engine_e_res_max) {
        engine_model = cfg.model == "ungm" ? models::make_ungm_model(0) : models::make_cubic_model();
        engine_cfg.e_res_max = *cfg.engine_e_res_max;
        engine_cfg.scaling = ResidualScaling::raw;
        engine_cfg.split_n = cfg.engine_split_n;
        engine_cfg.split_sigma = cfg.engine_split_sigma;
        engine_cfg.lambda = lambda;
    }

    BenchmarkReport report;
    std::vector<double> e_res;
    std::vector<double> kld0;
    std::vector<std::vector<double>> kld_split(splits.size());
    std::vector<double> kld_engine;
    for (const Gaussian& prior : draw_priors(cfg.samples, cfg.seed)) {
        models::MappedGaussianDensity truth(map, prior.mean(0), prior.covariance(0, 0));
        const auto truth_fn = [&truth](double y) { return truth(y); };
        PriorSample ps;
        ps.mean = prior.mean(0);
        ps.variance = prior.covariance(0, 0);
        ps.e_res = scalar_e_res(prior, map, lambda);
        ps.kld_no_split = numerical_kld({{1.0, unscented_scalar(prior, map, lambda)}}, truth_fn, cfg.kld_points, cfg.direction);
        for (std::size_t i = 0; i < splits.size(); ++i) {
            const double k = numerical_kld(split_once_scalar(prior, map, *splits[i], lambda), truth_fn, cfg.kld_points, cfg.direction);
            ps.kld_split.push_back(k);
            kld_split[i].push_back(k);
        }
        if (engine_model) {
            HybridMixture mix;
            mix.mixands.push_back({1.0, "", prior});
            const HybridMixture out = step_continuous(mix, *engine_model, engine_cfg, lib);
            ps.engine_mixands = out.size();
            ps.kld_engine = numerical_kld(continuous_part(out), truth_fn, cfg.kld_points, cfg.direction);
            kld_engine.push_back(*ps.kld_engine);
        }
        e_res.push_back(ps.e_res);
        kld0.push_back(ps.kld_no_split);
        report.samples.push_back(std::move(ps));
    }
    report.no_split = summarize("no-split", kld0);
    for (std::size_t i = 0; i < splits.size(); ++i) {
        std::ostringstream label;
        label << "N=" << cfg.splits[i].first << " sigma=" << cfg.splits[i].second;
        report.split_arms.push_back(summarize(label.str(), kld_split[i]));
    }
    if (engine_model) report.engine_arm = summarize("engine", kld_engine);
    report.pearson_e_res_kld = pearson(e_res, kld0);
    return report;
}

/// Pearson correlation between the raw linearity residual and the no-split KLD over random priors.
inline double correlation_study(const models::ScalarMap& map, int samples, std::uint64_t seed, std::optional<double> lambda = std::nullopt,
                                int kld_points = 20000) {
    if (samples < 30) throw Error(ErrorKind::InvalidArgument, "correlation_study: samples must be at least 30");
    const double lam = lambda.value_or(default_lambda(1, 0));
    std::vector<double> e_res;
    std::vector<double> kld;
    for (const Gaussian& prior : draw_priors(samples, seed)) {
        e_res.push_back(scalar_e_res(prior, map, lam));
        const Gaussian approx = unscented_scalar(prior, map, lam);
        if (!(approx.covariance(0, 0) > 0.0)) {
            kld.push_back(0.0);
            continue;
        }
        models::MappedGaussianDensity truth(map, prior.mean(0), prior.covariance(0, 0));
        kld.push_back(numerical_kld({{1.0, approx}}, [&truth](double y) { return truth(y); }, kld_points));
    }
    return pearson(e_res, kld);
}

} // namespace hgmm
