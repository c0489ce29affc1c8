#pragma once

#include "hgmm/anticipation.hpp"
#include "hgmm/core_types.hpp"
#include "hgmm/models/road_network.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hgmm {

using Rng = std::mt19937_64;

inline constexpr double kDensityFloor = 1e-300;

// ---------------------------------------------------------------------------------------------
// Sampling

/// Draws states from a Gaussian mixture, optionally restricted to a subset of coordinates.
class MixtureSampler {
public:
    /// `coords` selects the coordinates to sample (all when empty).
    explicit MixtureSampler(const HybridMixture& mix, std::vector<Eigen::Index> coords = {}) {
        if (mix.empty()) throw Error(ErrorKind::EmptyMixture, "MixtureSampler: empty mixture");
        if (coords.empty()) {
            for (Eigen::Index i = 0; i < mix.dim(); ++i) coords.push_back(i);
        }
        double acc = 0.0;
        for (const auto& m : mix.mixands) {
            Gaussian g = marginal(m.gaussian, coords);
            acc += m.weight;
            cumulative_.push_back(acc);
            means_.push_back(g.mean);
            roots_.push_back(matrix_sqrt(symmetrize(g.covariance)));
            discrete_.push_back(m.discrete);
        }
        dim_ = static_cast<Eigen::Index>(coords.size());
    }

    static Gaussian marginal(const Gaussian& g, const std::vector<Eigen::Index>& coords) {
        const auto n = static_cast<Eigen::Index>(coords.size());
        Gaussian out{Vector(n), Matrix(n, n)};
        for (Eigen::Index i = 0; i < n; ++i) {
            out.mean(i) = g.mean(coords[static_cast<std::size_t>(i)]);
            for (Eigen::Index j = 0; j < n; ++j) {
                out.covariance(i, j) = g.covariance(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
            }
        }
        return out;
    }

    /// Index of a mixand drawn by weight.
    std::size_t pick(Rng& rng) const {
        std::uniform_real_distribution<double> u(0.0, cumulative_.back());
        const double r = u(rng);
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
        return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    }

    Vector draw_from(std::size_t i, Rng& rng) const {
        std::normal_distribution<double> n01;
        Vector z(dim_);
        for (Eigen::Index j = 0; j < dim_; ++j) z(j) = n01(rng);
        return means_[i] + roots_[i] * z;
    }

    Vector draw(Rng& rng) const { return draw_from(pick(rng), rng); }

    [[nodiscard]] const DiscreteState& discrete(std::size_t i) const { return discrete_[i]; }
    [[nodiscard]] Eigen::Index dim() const { return dim_; }

private:
    std::vector<double> cumulative_;
    std::vector<Vector> means_;
    std::vector<Matrix> roots_;
    std::vector<DiscreteState> discrete_;
    Eigen::Index dim_ = 0;
};

/// Gaussian-mixture density with pre-factored covariances for repeated evaluation.
class MixtureDensity {
public:
    explicit MixtureDensity(const HybridMixture& mix, std::vector<Eigen::Index> coords = {}) {
        if (mix.empty()) throw Error(ErrorKind::EmptyMixture, "MixtureDensity: empty mixture");
        if (coords.empty()) {
            for (Eigen::Index i = 0; i < mix.dim(); ++i) coords.push_back(i);
        }
        for (const auto& m : mix.mixands) {
            const Gaussian g = MixtureSampler::marginal(m.gaussian, coords);
            Component c;
            c.mean = g.mean;
            const auto llt = detail::regularized_llt(g.covariance);
            c.lower_inv = llt.matrixL().solve(Matrix::Identity(g.mean.size(), g.mean.size()));
            const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
            c.log_norm = std::log(m.weight) - 0.5 * (static_cast<double>(g.mean.size()) * std::log(2.0 * std::numbers::pi) + log_det);
            components_.push_back(std::move(c));
        }
    }

    /// Log density via log-sum-exp.
    [[nodiscard]] double log_pdf(const Vector& x) const {
        double top = -std::numeric_limits<double>::infinity();
        thread_local std::vector<double> terms;
        terms.resize(components_.size());
        for (std::size_t i = 0; i < components_.size(); ++i) {
            const auto& c = components_[i];
            const Vector z = c.lower_inv.triangularView<Eigen::Lower>() * (x - c.mean);
            terms[i] = c.log_norm - 0.5 * z.squaredNorm();
            top = std::max(top, terms[i]);
        }
        if (!std::isfinite(top)) return top;
        double s = 0.0;
        for (double t : terms) s += std::exp(t - top);
        return top + std::log(s);
    }

    [[nodiscard]] double pdf(const Vector& x) const { return std::exp(log_pdf(x)); }

private:
    struct Component {
        Vector mean;
        Matrix lower_inv;
        double log_norm = 0.0;
    };
    std::vector<Component> components_;
};

// ---------------------------------------------------------------------------------------------
// Particle truth

struct ParticleSet {
    std::vector<Vector> states;
    std::vector<DiscreteState> discrete;
    int time_index = 0;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t size() const { return states.size(); }
};

inline ParticleSet sample_particles(const HybridMixture& mix, std::size_t count, std::uint64_t seed) {
    MixtureSampler sampler(mix);
    Rng rng(seed);
    ParticleSet ps;
    ps.seed = seed;
    ps.time_index = mix.time_index;
    ps.states.reserve(count);
    ps.discrete.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = sampler.pick(rng);
        ps.states.push_back(sampler.draw_from(j, rng));
        ps.discrete.push_back(sampler.discrete(j));
    }
    return ps;
}

/// One exact step of every particle: sampled discrete successor, sampled process noise, f^C.
inline void step_particles(ParticleSet& ps, const DynamicsModel& model, Rng& rng) {
    const Eigen::Index nv = model.noise().dim();
    const Matrix root = nv > 0 ? matrix_sqrt(model.noise().covariance) : Matrix(0, 0);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto successors = model.point_successors(ps.discrete[i], ps.states[i], ps.time_index);
        if (successors.empty()) throw Error(ErrorKind::NoSuccessor, "particle hypothesis '" + ps.discrete[i] + "' has no successor");
        std::size_t pick = 0;
        if (successors.size() > 1) {
            const double r = u01(rng);
            double acc = 0.0;
            pick = successors.size() - 1;
            for (std::size_t j = 0; j < successors.size(); ++j) {
                acc += successors[j].probability;
                if (r < acc) {
                    pick = j;
                    break;
                }
            }
        }
        ps.discrete[i] = successors[pick].next;
        Vector z(nv);
        for (Eigen::Index j = 0; j < nv; ++j) z(j) = n01(rng);
        const Vector v = nv > 0 ? Vector(root * z) : Vector(0);
        ps.states[i] = model.propagate(ps.discrete[i], ps.states[i], v, ps.time_index);
    }
    ++ps.time_index;
}

/// Particle set after `steps` exact steps.
inline ParticleSet propagate_particles(ParticleSet ps, const DynamicsModel& model, int steps, Rng& rng) {
    for (int s = 0; s < steps; ++s) step_particles(ps, model, rng);
    return ps;
}

/// Particle sets at steps 1..steps, sampled from `initial` with a fixed seed.
inline std::vector<ParticleSet> particle_truth(const HybridMixture& initial, const DynamicsModel& model, int steps,
                                               std::size_t count, std::uint64_t seed) {
    ParticleSet ps = sample_particles(initial, count, seed);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<ParticleSet> out;
    out.reserve(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
        step_particles(ps, model, rng);
        out.push_back(ps);
    }
    (void)model.take_anomaly_count();
    return out;
}

// ---------------------------------------------------------------------------------------------
// Divergences and likelihoods

enum class KldDirection {
    /// Integral of p_approx * log(p_approx / p_truth).
    approx_weighted,
    /// Integral of p_truth * log(p_truth / p_approx).
    truth_weighted,
};

using Density1 = std::function<double(double)>;

/// Trapezoid-rule KLD between two univariate densities on [lo, hi] with `points` nodes. Densities
/// are floored at 1e-300 before taking logarithms.
inline double numerical_kld(const Density1& approx, const Density1& truth, double lo, double hi, int points = 20000,
                            KldDirection direction = KldDirection::approx_weighted) {
    if (!(hi > lo) || points < 2) throw Error(ErrorKind::InvalidArgument, "numerical_kld: invalid grid");
    const double h = (hi - lo) / (points - 1);
    double sum = 0.0;
    for (int i = 0; i < points; ++i) {
        const double x = lo + h * i;
        const double a = approx(x);
        const double t = truth(x);
        if (!std::isfinite(a) || !std::isfinite(t)) throw Error(ErrorKind::NonFiniteDensity, "numerical_kld: non-finite density");
        const double pa = std::max(a, kDensityFloor);
        const double pt = std::max(t, kDensityFloor);
        const double integrand = direction == KldDirection::approx_weighted ? pa * std::log(pa / pt) : pt * std::log(pt / pa);
        sum += (i == 0 || i == points - 1) ? 0.5 * integrand : integrand;
    }
    return sum * h;
}

/// KLD of a univariate Gaussian mixture to a truth density, on the grid mean +/- 8 sd of the mixture.
inline double numerical_kld(const std::vector<WeightedGaussian>& approx, const Density1& truth, int points = 20000,
                            KldDirection direction = KldDirection::approx_weighted) {
    const Gaussian m = moments(approx);
    if (m.dim() != 1) throw Error(ErrorKind::DimensionMismatch, "numerical_kld: approximation must be univariate");
    const double sd = std::sqrt(m.covariance(0, 0));
    if (!(sd > 0.0)) throw Error(ErrorKind::NonFiniteDensity, "numerical_kld: approximation has zero variance");
    const auto pa = [&](double x) { return mixture_pdf(approx, Vector::Constant(1, x)); };
    return numerical_kld(pa, truth, m.mean(0) - 8.0 * sd, m.mean(0) + 8.0 * sd, points, direction);
}

struct NllResult {
    /// Per-frame negative log-likelihood.
    std::vector<double> values;
    /// Monte-Carlo standard error of each value.
    std::vector<double> standard_errors;
    /// Number of particles whose density fell below the floor.
    long floored = 0;

    [[nodiscard]] double mean() const {
        if (values.empty()) return 0.0;
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }

    /// Standard error of mean(), treating frames as independent estimates.
    [[nodiscard]] double mean_standard_error() const {
        if (values.empty()) return 0.0;
        double s = 0.0;
        for (double e : standard_errors) s += e * e;
        return std::sqrt(s) / static_cast<double>(values.size());
    }
};

/// Per-particle log density of one frame (discrete states marginalised).
inline std::vector<double> particle_log_densities(const HybridMixture& frame, const ParticleSet& truth, long* floored = nullptr) {
    const MixtureDensity density(frame);
    std::vector<double> out(truth.size());
    const double floor_log = std::log(kDensityFloor);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        double lp = density.log_pdf(truth.states[i]);
        if (!(lp >= floor_log)) {
            lp = floor_log;
            if (floored != nullptr) ++*floored;
        }
        out[i] = lp;
    }
    return out;
}

/// Negative log-likelihood of the truth particles under each frame.
inline NllResult nll(const std::vector<HybridMixture>& frames, const std::vector<ParticleSet>& truth) {
    if (frames.size() != truth.size()) throw Error(ErrorKind::DimensionMismatch, "nll: frame and particle sequences differ in length");
    NllResult r;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        if (frames[k].time_index != truth[k].time_index) throw Error(ErrorKind::NoFrameMatch, "nll: step indices are not aligned");
        const auto lp = particle_log_densities(frames[k], truth[k], &r.floored);
        const double n = static_cast<double>(lp.size());
        double mean = 0.0;
        for (double v : lp) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : lp) var += (v - mean) * (v - mean);
        var /= std::max(1.0, n - 1.0);
        r.values.push_back(-mean);
        r.standard_errors.push_back(std::sqrt(var / n));
    }
    if (r.floored > 0) {
        log_warning("nll: " + std::to_string(r.floored) + " particles had zero likelihood (density floor applied)");
    }
    return r;
}

struct Observation {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    std::optional<double> v;
    std::optional<double> theta;
};

struct TrackObservations {
    std::string source;
    std::vector<Observation> observations;
};

inline void validate_track(const TrackObservations& track) {
    for (std::size_t i = 1; i < track.observations.size(); ++i) {
        if (!(track.observations[i].t > track.observations[i - 1].t)) {
            throw Error(ErrorKind::InvalidArgument, "track '" + track.source + "': timestamps must be strictly increasing");
        }
    }
}

/// Index of the frame whose time k * dt is nearest to t, within dt / 2.
inline std::size_t match_frame(const std::vector<HybridMixture>& frames, double dt, double t) {
    std::size_t best = frames.size();
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const double gap = std::abs(frames[i].time_index * dt - t);
        if (gap < best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    if (best == frames.size() || best_gap > 0.5 * dt * (1.0 + 1e-9)) {
        throw Error(ErrorKind::NoFrameMatch, "no frame within dt/2 of t = " + std::to_string(t));
    }
    return best;
}

/// Sum over observations of the log density of the frame's position marginal at the observation.
inline double log_likelihood(const std::vector<HybridMixture>& frames, double dt, const TrackObservations& track) {
    validate_track(track);
    double total = 0.0;
    for (const auto& obs : track.observations) {
        const std::size_t k = match_frame(frames, dt, obs.t);
        const MixtureDensity density(frames[k], {0, 1});
        total += std::max(density.log_pdf(Vector((Vector(2) << obs.x, obs.y).finished())), std::log(kDensityFloor));
    }
    return total;
}

/// Concatenated centerlines of a sequence of segments.
inline models::Polyline route_centerline(const models::RoadNetwork& network, const std::vector<std::string>& route) {
    if (route.empty()) throw Error(ErrorKind::InvalidArgument, "route_centerline: empty route");
    std::vector<models::Point2> pts;
    for (const auto& id : route) {
        for (const auto& p : network.segment(id).centerline.points()) {
            if (!pts.empty() && (p - pts.back()).norm() < models::RoadNetwork::kContinuityTol) continue;
            pts.push_back(p);
        }
    }
    return models::Polyline(std::move(pts));
}

struct EoteResult {
    std::vector<double> per_frame;
    double total = 0.0;
};

/// Expected off-track error: Monte-Carlo expectation of the distance from the lane centerline of
/// the route, per frame, summed over frames.
inline EoteResult eote(const std::vector<HybridMixture>& frames, const models::Polyline& centerline, std::size_t samples = 10000,
                       std::uint64_t seed = 1) {
    EoteResult r;
    Rng rng(seed);
    for (const auto& frame : frames) {
        const MixtureSampler sampler(frame, {0, 1});
        double acc = 0.0;
        for (std::size_t i = 0; i < samples; ++i) {
            const Vector p = sampler.draw(rng);
            acc += centerline.distance(models::Point2(p(0), p(1)));
        }
        const double value = acc / static_cast<double>(samples);
        r.per_frame.push_back(value);
        r.total += value;
    }
    return r;
}

// ---------------------------------------------------------------------------------------------
// Collision probability

struct Footprint {
    double length = 4.5;
    double width = 1.8;
};

struct Pose {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
};

/// Whether two oriented rectangles centred on their poses overlap (separating-axis test).
inline bool rectangles_overlap(const Pose& a, const Footprint& fa, const Pose& b, const Footprint& fb) {
    const models::Point2 ca(a.x, a.y);
    const models::Point2 cb(b.x, b.y);
    const models::Point2 ax[2] = {{std::cos(a.theta), std::sin(a.theta)}, {-std::sin(a.theta), std::cos(a.theta)}};
    const models::Point2 bx[2] = {{std::cos(b.theta), std::sin(b.theta)}, {-std::sin(b.theta), std::cos(b.theta)}};
    const double ha[2] = {0.5 * fa.length, 0.5 * fa.width};
    const double hb[2] = {0.5 * fb.length, 0.5 * fb.width};
    const models::Point2 d = cb - ca;
    for (const auto* axes : {ax, bx}) {
        for (int i = 0; i < 2; ++i) {
            const models::Point2& n = axes[i];
            const double ra = ha[0] * std::abs(ax[0].dot(n)) + ha[1] * std::abs(ax[1].dot(n));
            const double rb = hb[0] * std::abs(bx[0].dot(n)) + hb[1] * std::abs(bx[1].dot(n));
            if (std::abs(d.dot(n)) > ra + rb) return false;
        }
    }
    return true;
}

struct CollisionEstimate {
    double probability = 0.0;
    /// Wilson score 95% interval.
    double lower = 0.0;
    double upper = 0.0;
};

inline CollisionEstimate wilson_interval(std::size_t hits, std::size_t n, double z = 1.959963984540054) {
    CollisionEstimate e;
    if (n == 0) return e;
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(hits) / nn;
    const double denom = 1.0 + z * z / nn;
    const double centre = (p + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    e.probability = p;
    e.lower = hits == 0 ? 0.0 : std::max(0.0, centre - half);
    e.upper = hits == n ? 1.0 : std::min(1.0, centre + half);
    return e;
}

/// Per-frame probability that the obstacle footprint, at a pose sampled from the frame, overlaps
/// the ego footprint at the ego pose matched by time. The obstacle heading is state coordinate 3
/// when present.
inline std::vector<CollisionEstimate> collision_probability(const std::vector<HybridMixture>& frames, double dt,
                                                            const std::vector<Pose>& ego, const Footprint& ego_footprint,
                                                            const Footprint& obstacle_footprint, std::size_t samples,
                                                            std::uint64_t seed) {
    if (samples == 0) throw Error(ErrorKind::InvalidArgument, "collision_probability: samples must be positive");
    std::vector<CollisionEstimate> out;
    Rng rng(seed);
    for (const auto& frame : frames) {
        const double t = frame.time_index * dt;
        const Pose* match = nullptr;
        double gap = std::numeric_limits<double>::infinity();
        for (const auto& p : ego) {
            if (std::abs(p.t - t) < gap) {
                gap = std::abs(p.t - t);
                match = &p;
            }
        }
        if (match == nullptr || gap > 0.5 * dt * (1.0 + 1e-9)) {
            throw Error(ErrorKind::NoFrameMatch, "collision_probability: no ego pose within dt/2 of t = " + std::to_string(t));
        }
        const MixtureSampler sampler(frame);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < samples; ++i) {
            const Vector s = sampler.draw(rng);
            const Pose obstacle{t, s(0), s(1), s.size() > 3 ? s(3) : 0.0};
            if (rectangles_overlap(*match, ego_footprint, obstacle, obstacle_footprint)) ++hits;
        }
        out.push_back(wilson_interval(hits, samples));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Statistics

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 3) throw Error(ErrorKind::InvalidArgument, "pearson: need two equal-length samples of at least 3");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    const double scale_x = std::max(1.0, mx * mx) * n;
    const double scale_y = std::max(1.0, my * my) * n;
    if (sxx <= 1e-24 * scale_x || syy <= 1e-24 * scale_y) throw Error(ErrorKind::DegenerateVariance, "pearson: a sample has zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct TTestResult {
    double mean_difference = 0.0;
    double t = 0.0;
    double dof = 0.0;
    /// One-sided p-value for the alternative mean(a - b) > 0.
    double p_value = 1.0;
};

/// One-sided paired t-test of mean(a - b) > 0.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw Error(ErrorKind::InvalidArgument, "paired_t_test: need two equal-length samples of at least 2");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    var /= n - 1.0;
    TTestResult r;
    r.mean_difference = mean;
    r.dof = n - 1.0;
    if (var <= 0.0) {
        r.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : (mean < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0);
        r.p_value = mean > 0.0 ? 0.0 : (mean < 0.0 ? 1.0 : 0.5);
        return r;
    }
    r.t = mean / std::sqrt(var / n);
    const boost::math::students_t dist(r.dof);
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
    return r;
}

inline double sample_mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = sample_mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

} // namespace hgmm
