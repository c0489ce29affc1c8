#pragma once

#include "hgmm/core_types.hpp"
#include "hgmm/linearity.hpp"
#include "hgmm/log.hpp"
#include "hgmm/reduction.hpp"
#include "hgmm/sigma_transform.hpp"
#include "hgmm/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace hgmm {

struct Transition {
    DiscreteState next;
    double probability = 1.0;
};

/// Hybrid dynamics: discrete transitions f^D and continuous dynamics f^C with additive-input
/// Gaussian process noise. Implementations must be safe to call concurrently.
class DynamicsModel {
public:
    virtual ~DynamicsModel() = default;

    [[nodiscard]] virtual Eigen::Index state_dim() const = 0;
    [[nodiscard]] virtual const ProcessNoise& noise() const = 0;

    /// Successor hypotheses of a mixand at step k; probabilities sum to one.
    [[nodiscard]] virtual std::vector<Transition> discrete_successors(const DiscreteState& alpha, const Gaussian& g,
                                                                      int k) const = 0;

    /// f^C(alpha_next, x, v) at step k. Throws Error(ModelEvaluationFailure) for undefined inputs.
    [[nodiscard]] virtual Vector propagate(const DiscreteState& alpha_next, const Vector& x, const Vector& v,
                                           int k) const = 0;

    /// Successors of a single sampled state (particle truth).
    [[nodiscard]] virtual std::vector<Transition> point_successors(const DiscreteState& alpha, const Vector& x, int k) const {
        return discrete_successors(alpha, Gaussian{x, Matrix::Zero(x.size(), x.size())}, k);
    }

    /// Number of model-specific anomalies (e.g. points projected off the road network) since the
    /// last call; the engine reports them as warnings.
    [[nodiscard]] virtual long take_anomaly_count() const { return 0; }
};

struct EngineConfig {
    double e_res_max = 0.1;
    ResidualScaling scaling = ResidualScaling::scaled;
    int split_n = 5;
    double split_sigma = 0.3;
    int max_split_depth = 4;
    ReductionConfig reduction{};
    /// Sigma-point scaling; defaults to 3 - (n_x + n_v).
    std::optional<double> lambda;
    double dt = 0.1;
    double horizon = 3.5;
    /// Worker count for the continuous step; 1 runs sequentially.
    int threads = 1;
    double weight_floor = kWeightFloor;

    [[nodiscard]] int steps() const {
        const double ratio = horizon / dt;
        const double rounded = std::round(ratio);
        if (!(dt > 0.0) || !(horizon > 0.0) || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
            throw Error(ErrorKind::InvalidArgument, "horizon must be a positive integer multiple of dt");
        }
        return static_cast<int>(rounded);
    }

    [[nodiscard]] bool splitting_enabled() const { return std::isfinite(e_res_max); }
};

struct StepStats {
    int splits = 0;
    int forced_recombinations = 0;
    std::size_t mixands_after_discrete = 0;
    std::size_t mixands_after_continuous = 0;
    std::size_t mixands_after_reduction = 0;
    long anomalies = 0;
};

inline HybridMixture step_discrete(const HybridMixture& mix, const DynamicsModel& model) {
    HybridMixture out;
    out.time_index = mix.time_index;
    out.mixands.reserve(mix.size());
    for (const auto& m : mix.mixands) {
        const auto successors = model.discrete_successors(m.discrete, m.gaussian, mix.time_index);
        if (successors.empty()) {
            throw Error(ErrorKind::NoSuccessor, "hypothesis '" + m.discrete + "' has no successor");
        }
        for (const auto& s : successors) {
            if (!(s.probability > 0.0)) continue;
            out.mixands.push_back({m.weight * s.probability, s.next, m.gaussian});
        }
    }
    normalize(out);
    return out;
}

namespace detail {

struct MixandPropagation {
    std::vector<HybridMixand> out;
    int splits = 0;
    int forced = 0;
};

inline void propagate_mixand(const HybridMixand& m, int depth, const DynamicsModel& model, const EngineConfig& cfg,
                             const CanonicalSplit* split, double lambda, int k, MixandPropagation& acc) {
    const SigmaSet sigma = generate_sigma_points(m.gaussian, model.noise(), lambda);
    const auto f = [&](const DiscreteState& a, const Vector& x, const Vector& v) { return model.propagate(a, x, v, k); };
    const Matrix post = propagate_points(sigma, m.discrete, f);
    const RecombinationWeights w = recombination_weights(sigma);

    if (split != nullptr) {
        LinearityOptions opts;
        opts.e_res_max = cfg.e_res_max;
        opts.scaling = cfg.scaling;
        opts.prior_trace = m.gaussian.covariance.trace();
        const Eigen::Index block = sigma.state_block();
        const LinearityReport report =
            assess_linearity(sigma.state_points.leftCols(block), post.leftCols(block), opts);
        if (!report.passed) {
            if (depth < cfg.max_split_depth) {
                std::vector<HybridMixand> children;
                try {
                    children = apply_split(m, report.split_axis, *split);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::SingularCovariance) throw;
                }
                if (!children.empty()) {
                    ++acc.splits;
                    for (const auto& c : children) propagate_mixand(c, depth + 1, model, cfg, split, lambda, k, acc);
                    return;
                }
            }
            ++acc.forced;
        }
    }
    acc.out.push_back({m.weight, m.discrete, recombine(post, w)});
}

} // namespace detail

/// Continuous propagation of every mixand with linearity-gated recursive splitting.
inline HybridMixture step_continuous(const HybridMixture& mix, const DynamicsModel& model, const EngineConfig& cfg,
                                     const SplitLibrary& lib, StepStats* stats = nullptr) {
    const Eigen::Index nx = model.state_dim();
    const double lambda = cfg.lambda.value_or(default_lambda(nx, model.noise().dim()));
    const CanonicalSplit* split = cfg.splitting_enabled() ? &lib.at(cfg.split_n, cfg.split_sigma) : nullptr;
    const int k = mix.time_index;

    std::vector<detail::MixandPropagation> results(mix.size());
    std::vector<std::exception_ptr> errors(mix.size());
    auto work = [&](std::size_t i) {
        try {
            detail::propagate_mixand(mix.mixands[i], 0, model, cfg, split, lambda, k, results[i]);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::ModelEvaluationFailure) {
                errors[i] = std::make_exception_ptr(Error(ErrorKind::ModelEvaluationFailure,
                                                          "mixand " + std::to_string(i) + " (alpha '" +
                                                              mix.mixands[i].discrete + "', step " + std::to_string(k) +
                                                              "): " + e.what()));
            } else {
                errors[i] = std::current_exception();
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.threads, 1)), mix.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < mix.size(); ++i) work(i);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < mix.size(); i += workers) work(i);
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    HybridMixture out;
    out.time_index = k + 1;
    int splits = 0;
    int forced = 0;
    for (auto& r : results) {
        splits += r.splits;
        forced += r.forced;
        for (auto& m : r.out) out.mixands.push_back(std::move(m));
    }
    normalize(out);
    if (forced > 0) {
        log_warning("step " + std::to_string(k) + ": " + std::to_string(forced) +
                    " mixands hit the split depth cap and were recombined without passing the linearity test");
    }
    const long anomalies = model.take_anomaly_count();
    if (anomalies > 0) {
        log_warning("step " + std::to_string(k) + ": " + std::to_string(anomalies) + " model anomalies (off-network points)");
    }
    if (stats != nullptr) {
        stats->splits = splits;
        stats->forced_recombinations = forced;
        stats->mixands_after_continuous = out.size();
        stats->anomalies = anomalies;
    }
    return out;
}

/// One full prediction step: discrete transition, continuous propagation, reduction, weight floor.
inline HybridMixture anticipation_step(const HybridMixture& mix, const DynamicsModel& model, const EngineConfig& cfg,
                                       const SplitLibrary& lib, StepStats* stats = nullptr) {
    const HybridMixture discrete = step_discrete(mix, model);
    HybridMixture continuous = step_continuous(discrete, model, cfg, lib, stats);
    HybridMixture reduced = reduce(continuous, cfg.reduction);
    apply_weight_floor(reduced, cfg.weight_floor);
    if (stats != nullptr) {
        stats->mixands_after_discrete = discrete.size();
        stats->mixands_after_reduction = reduced.size();
    }
    return reduced;
}

/// Frames 1..K of the anticipated distribution, K = horizon / dt.
inline std::vector<HybridMixture> anticipate(const HybridMixture& initial, const DynamicsModel& model, const EngineConfig& cfg,
                                             const SplitLibrary& lib, std::vector<StepStats>* stats = nullptr) {
    validate_mixture(initial);
    if (initial.dim() != model.state_dim()) throw Error(ErrorKind::DimensionMismatch, "anticipate: initial mixture dimension differs from model");
    const int steps = cfg.steps();
    std::vector<HybridMixture> frames;
    frames.reserve(static_cast<std::size_t>(steps));
    if (stats != nullptr) stats->assign(static_cast<std::size_t>(steps), StepStats{});
    HybridMixture current = initial;
    for (int s = 0; s < steps; ++s) {
        current = anticipation_step(current, model, cfg, lib, stats != nullptr ? &(*stats)[static_cast<std::size_t>(s)] : nullptr);
        frames.push_back(current);
    }
    return frames;
}

} // namespace hgmm
