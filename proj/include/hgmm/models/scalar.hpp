#pragma once

#include "hgmm/anticipation.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <vector>

namespace hgmm::models {

/// Univariate non-stationary growth model x' = alpha x + beta x / (1 + x^2) + gamma cos(1.2 k).
struct UngmParams {
    double alpha = 0.3;
    double beta = 1.0;
    double gamma = 1.0;
};

inline double ungm_step(double x, int k, const UngmParams& p = {}) {
    return p.alpha * x + p.beta * x / (1.0 + x * x) + p.gamma * std::cos(1.2 * k);
}

inline double ungm_derivative(double x, const UngmParams& p = {}) {
    const double d = 1.0 + x * x;
    return p.alpha + p.beta * (1.0 - x * x) / (d * d);
}

/// x' = a x^3 + b x^2 + c x + d
struct CubicParams {
    double a = 6.0;
    double b = 1.0;
    double c = 1.0;
    double d = 1.0;
};

inline double cubic_step(double x, const CubicParams& p = {}) { return ((p.a * x + p.b) * x + p.c) * x + p.d; }

inline double cubic_derivative(double x, const CubicParams& p = {}) { return (3.0 * p.a * x + 2.0 * p.b) * x + p.c; }

/// A deterministic scalar map with its derivative.
struct ScalarMap {
    std::function<double(double)> value;
    std::function<double(double)> derivative;
};

inline ScalarMap ungm_map(int k = 0, UngmParams p = {}) {
    return {[k, p](double x) { return ungm_step(x, k, p); }, [p](double x) { return ungm_derivative(x, p); }};
}

inline ScalarMap cubic_map(CubicParams p = {}) {
    return {[p](double x) { return cubic_step(x, p); }, [p](double x) { return cubic_derivative(x, p); }};
}

/// Scalar model without process noise. The time index used by the map is `k + k_offset`, unless
/// `fixed_k` is set, in which case every step uses that index.
class ScalarMapModel final : public DynamicsModel {
public:
    using Step = std::function<double(double, int)>;

    explicit ScalarMapModel(Step step, std::optional<int> fixed_k = std::nullopt)
        : step_(std::move(step)), fixed_k_(fixed_k) {}

    [[nodiscard]] Eigen::Index state_dim() const override { return 1; }
    [[nodiscard]] const ProcessNoise& noise() const override { return noise_; }

    [[nodiscard]] std::vector<Transition> discrete_successors(const DiscreteState& alpha, const Gaussian&, int) const override {
        return {{alpha, 1.0}};
    }

    [[nodiscard]] Vector propagate(const DiscreteState&, const Vector& x, const Vector&, int k) const override {
        const double y = step_(x(0), fixed_k_.value_or(k));
        if (!std::isfinite(y)) throw Error(ErrorKind::ModelEvaluationFailure, "scalar map produced a non-finite value");
        return Vector::Constant(1, y);
    }

private:
    Step step_;
    std::optional<int> fixed_k_;
    ProcessNoise noise_ = ProcessNoise::none();
};

inline std::unique_ptr<ScalarMapModel> make_ungm_model(std::optional<int> fixed_k = 0, UngmParams p = {}) {
    return std::make_unique<ScalarMapModel>([p](double x, int k) { return ungm_step(x, k, p); }, fixed_k);
}

inline std::unique_ptr<ScalarMapModel> make_cubic_model(CubicParams p = {}) {
    return std::make_unique<ScalarMapModel>([p](double x, int) { return cubic_step(x, p); }, 0);
}

/// Density of y = g(x) for x ~ N(mean, var), by change of variables over the monotone branches of
/// g. The prior is truncated at +/- 12 standard deviations, where its density is below 1e-31.
class MappedGaussianDensity {
public:
    MappedGaussianDensity(ScalarMap map, double mean, double var) : map_(std::move(map)), mean_(mean), var_(var) {
        if (!(var > 0.0)) throw Error(ErrorKind::InvalidArgument, "MappedGaussianDensity: variance must be positive");
        const double sd = std::sqrt(var);
        const double lo = mean - 12.0 * sd;
        const double hi = mean + 12.0 * sd;
        constexpr int scan = 4000;
        std::vector<double> cuts{lo};
        double prev_x = lo;
        double prev_d = map_.derivative(lo);
        for (int i = 1; i <= scan; ++i) {
            const double x = lo + (hi - lo) * i / scan;
            const double d = map_.derivative(x);
            if ((prev_d < 0.0) != (d < 0.0)) {
                double a = prev_x;
                double b = x;
                for (int it = 0; it < 200 && b - a > 1e-15 * (1.0 + std::abs(a)); ++it) {
                    const double mid = 0.5 * (a + b);
                    if ((map_.derivative(mid) < 0.0) == (prev_d < 0.0)) a = mid; else b = mid;
                }
                cuts.push_back(0.5 * (a + b));
            }
            prev_x = x;
            prev_d = d;
        }
        cuts.push_back(hi);
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            Branch b;
            b.a = cuts[i];
            b.b = cuts[i + 1];
            b.ga = map_.value(b.a);
            b.gb = map_.value(b.b);
            b.increasing = b.gb >= b.ga;
            b.warm = 0.5 * (b.a + b.b);
            branches_.push_back(b);
        }
    }

    /// Density at y. Not thread-safe: the inverse search warm-starts from the previous query.
    double operator()(double y) {
        double p = 0.0;
        for (auto& br : branches_) {
            const double ymin = std::min(br.ga, br.gb);
            const double ymax = std::max(br.ga, br.gb);
            if (y < ymin || y > ymax) continue;
            const double x = invert(br, y);
            const double slope = std::abs(map_.derivative(x));
            if (slope <= 0.0) continue;
            const double z = (x - mean_) / std::sqrt(var_);
            p += std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi * var_) / slope;
        }
        return p;
    }

    [[nodiscard]] std::size_t branch_count() const { return branches_.size(); }

private:
    struct Branch {
        double a = 0.0;
        double b = 0.0;
        double ga = 0.0;
        double gb = 0.0;
        bool increasing = true;
        double warm = 0.0;
    };

    double invert(Branch& br, double y) const {
        double lo = br.a;
        double hi = br.b;
        double x = std::clamp(br.warm, lo, hi);
        for (int it = 0; it < 100; ++it) {
            const double r = map_.value(x) - y;
            const bool above = br.increasing ? r > 0.0 : r < 0.0;
            if (r == 0.0) break;
            if (above) hi = x; else lo = x;
            const double d = map_.derivative(x);
            double next = d != 0.0 ? x - r / d : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (std::abs(next - x) <= 1e-14 * (1.0 + std::abs(x))) {
                x = next;
                break;
            }
            x = next;
        }
        br.warm = x;
        return x;
    }

    ScalarMap map_;
    double mean_;
    double var_;
    std::vector<Branch> branches_;
};

/// Exact one-step propagated density of a scalar Gaussian prior through the UNGM at index k.
inline MappedGaussianDensity ungm_truth_density(const Gaussian& prior, int k = 0, UngmParams p = {}) {
    if (prior.dim() != 1) throw Error(ErrorKind::DimensionMismatch, "ungm_truth_density: prior must be scalar");
    return {ungm_map(k, p), prior.mean(0), prior.covariance(0, 0)};
}

inline MappedGaussianDensity cubic_truth_density(const Gaussian& prior, CubicParams p = {}) {
    if (prior.dim() != 1) throw Error(ErrorKind::DimensionMismatch, "cubic_truth_density: prior must be scalar");
    return {cubic_map(p), prior.mean(0), prior.covariance(0, 0)};
}

} // namespace hgmm::models
