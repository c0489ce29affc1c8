#pragma once

#include "hgmm/core_types.hpp"

#include <Eigen/QR>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace hgmm {

/// Precomputed split of N(0, I) along the first axis into N evenly spaced components.
/// Component i sits at (i - (N-1)/2) * delta_mu on axis 1 with variance sigma^2 along that axis
/// and unit variance elsewhere. `isd` is the objective of the one-dimensional problem; in n
/// dimensions the ISD is that value times (4 pi)^(-(n-1)/2).
struct CanonicalSplit {
    int n_components = 1;
    double sigma = 1.0;
    double delta_mu = 0.0;
    std::vector<double> weights{1.0};
    double isd = 0.0;

    [[nodiscard]] double offset(int i) const { return (i - 0.5 * (n_components - 1)) * delta_mu; }
    [[nodiscard]] double axis_variance() const { return sigma * sigma; }
};

struct SplitGrid {
    double delta_min = 0.0;
    double delta_max = 4.0;
    double step = 1e-3;
};

struct QpResult {
    std::vector<double> weights;
    /// w^T H w - 2 f^T w at the solution.
    double objective = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
};

namespace detail {

inline double gauss1(double x, double mean, double var) {
    return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

inline double simplex_objective(const Matrix& h, const Vector& f, const Vector& w) {
    return w.dot(h * w) - 2.0 * f.dot(w);
}

/// KKT residual of min w^T H w - 2 f^T w over the probability simplex.
inline double simplex_kkt_residual(const Matrix& h, const Vector& f, const Vector& w, double zero_tol = 0.0) {
    const Vector g = 2.0 * (h * w - f);
    double nu = 0.0;
    int support = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (w(i) > zero_tol) {
            nu += g(i);
            ++support;
        }
    }
    nu = support > 0 ? nu / support : g.minCoeff();
    double r = std::abs(w.sum() - 1.0);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double mu = g(i) - nu;
        r = std::max(r, std::max(0.0, -w(i)));
        if (w(i) > zero_tol) {
            r = std::max(r, std::abs(mu));
        } else {
            r = std::max(r, std::max(0.0, -mu));
            r = std::max(r, std::abs(w(i) * mu));
        }
    }
    return r;
}

} // namespace detail

/// Minimise w^T H w - 2 f^T w subject to w >= 0, sum(w) = 1 with a primal active-set method.
/// The equality constraint stays in each equality-constrained subproblem; Bland's rule picks the
/// constraint to drop or add, so the iteration cannot cycle. `start` must be feasible if given.
inline QpResult solve_simplex_qp(const Matrix& h, const Vector& f, const Vector* start = nullptr, int max_iterations = 500) {
    const Eigen::Index n = f.size();
    if (h.rows() != n || h.cols() != n) throw Error(ErrorKind::DimensionMismatch, "solve_simplex_qp: H and f disagree");
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "solve_simplex_qp: empty problem");

    constexpr double tol = 1e-13;
    Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
    std::vector<bool> active(static_cast<std::size_t>(n), false);
    if (start != nullptr) {
        if (start->size() != n) throw Error(ErrorKind::DimensionMismatch, "solve_simplex_qp: start has wrong size");
        w = *start;
        for (Eigen::Index i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = w(i) <= 0.0;
        w = w.cwiseMax(0.0);
        if (w.sum() <= 0.0) throw Error(ErrorKind::QpInfeasible, "solve_simplex_qp: start point is not on the simplex");
        w /= w.sum();
    }

    QpResult result;
    for (int iter = 0; iter < max_iterations; ++iter) {
        result.iterations = iter + 1;
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!active[static_cast<std::size_t>(i)]) free.push_back(i);
        }
        if (free.empty()) throw Error(ErrorKind::QpInfeasible, "solve_simplex_qp: every weight is pinned at zero");
        const auto m = static_cast<Eigen::Index>(free.size());

        // [2 H_FF  -1; 1^T  0] [w_F; nu] = [2 f_F; 1]
        Matrix kkt = Matrix::Zero(m + 1, m + 1);
        Vector rhs(m + 1);
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index b = 0; b < m; ++b) kkt(a, b) = 2.0 * h(free[a], free[b]);
            kkt(a, m) = -1.0;
            kkt(m, a) = 1.0;
            rhs(a) = 2.0 * f(free[a]);
        }
        rhs(m) = 1.0;
        const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
        const double nu = sol(m);

        Vector step = -w;
        for (Eigen::Index a = 0; a < m; ++a) step(free[a]) += sol(a);

        if (step.lpNorm<Eigen::Infinity>() <= tol) {
            const Vector g = 2.0 * (h * w - f);
            Eigen::Index leave = -1;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (active[static_cast<std::size_t>(i)] && g(i) - nu < -1e-12) {
                    leave = i;
                    break;
                }
            }
            if (leave < 0) {
                result.weights.assign(w.data(), w.data() + n);
                result.objective = detail::simplex_objective(h, f, w);
                result.kkt_residual = detail::simplex_kkt_residual(h, f, w);
                return result;
            }
            active[static_cast<std::size_t>(leave)] = false;
            continue;
        }

        double alpha = 1.0;
        Eigen::Index blocking = -1;
        for (Eigen::Index i : free) {
            if (step(i) < 0.0) {
                const double ratio = w(i) / -step(i);
                if (ratio < alpha) {
                    alpha = ratio;
                    blocking = i;
                }
            }
        }
        w += alpha * step;
        if (blocking >= 0) {
            w(blocking) = 0.0;
            active[static_cast<std::size_t>(blocking)] = true;
        }
        w = w.cwiseMax(0.0);
    }
    throw Error(ErrorKind::MaxIterations, "solve_simplex_qp: active-set iteration did not terminate");
}

/// H and f of the one-dimensional canonical split problem for component means `means` and
/// along-axis standard deviation `sigma`.
inline std::pair<Matrix, Vector> canonical_qp_terms(const std::vector<double>& means, double sigma) {
    const auto n = static_cast<Eigen::Index>(means.size());
    const double var = sigma * sigma;
    Matrix h(n, n);
    Vector f(n);
    for (Eigen::Index l = 0; l < n; ++l) {
        f(l) = detail::gauss1(0.0, means[l], 1.0 + var);
        for (Eigen::Index k = 0; k < n; ++k) h(l, k) = detail::gauss1(means[l], means[k], 2.0 * var);
    }
    return {h, f};
}

/// J11 of the canonical problem: the ISD self term of N(0, 1).
inline double canonical_self_term() { return 1.0 / std::sqrt(4.0 * std::numbers::pi); }

inline QpResult solve_weight_qp(const std::vector<double>& means, double sigma, const Vector* start = nullptr) {
    auto [h, f] = canonical_qp_terms(means, sigma);
    return solve_simplex_qp(h, f, start);
}

inline std::vector<double> canonical_means(int n_components, double delta_mu) {
    std::vector<double> means(static_cast<std::size_t>(n_components));
    for (int i = 0; i < n_components; ++i) means[static_cast<std::size_t>(i)] = (i - 0.5 * (n_components - 1)) * delta_mu;
    return means;
}

/// Exhaustive search over the spacing grid with QP-optimal weights at every grid point.
inline CanonicalSplit optimize_canonical_split(int n_components, double sigma, const SplitGrid& grid = {}) {
    if (n_components < 1 || n_components % 2 == 0) throw Error(ErrorKind::InvalidArgument, "N must be odd");
    if (!(sigma > 0.0 && sigma <= 1.0)) throw Error(ErrorKind::InvalidSigma, "sigma must lie in (0, 1]");
    if (!(grid.step > 0.0) || grid.delta_max < grid.delta_min || grid.delta_min < 0.0) {
        throw Error(ErrorKind::InvalidArgument, "invalid spacing grid");
    }

    CanonicalSplit best;
    best.n_components = n_components;
    best.sigma = sigma;
    if (n_components == 1) {
        auto [h, f] = canonical_qp_terms({0.0}, sigma);
        best.delta_mu = 0.0;
        best.weights = {1.0};
        best.isd = canonical_self_term() - 2.0 * f(0) + h(0, 0);
        return best;
    }

    const auto steps = static_cast<long>(std::floor((grid.delta_max - grid.delta_min) / grid.step + 1e-9));
    double best_objective = std::numeric_limits<double>::infinity();
    Vector warm;
    bool have_warm = false;
    for (long i = 0; i <= steps; ++i) {
        const double delta = grid.delta_min + static_cast<double>(i) * grid.step;
        const QpResult qp = solve_weight_qp(canonical_means(n_components, delta), sigma, have_warm ? &warm : nullptr);
        warm = Eigen::Map<const Vector>(qp.weights.data(), n_components);
        have_warm = true;
        if (qp.objective < best_objective) {
            best_objective = qp.objective;
            best.delta_mu = delta;
            best.weights = qp.weights;
        }
    }
    // The problem is mirror-symmetric and convex, so averaging with the mirror image cannot hurt.
    std::vector<double> sym(best.weights.size());
    for (std::size_t i = 0; i < sym.size(); ++i) sym[i] = 0.5 * (best.weights[i] + best.weights[sym.size() - 1 - i]);
    double total = 0.0;
    for (double v : sym) total += v;
    for (double& v : sym) v /= total;
    best.weights = sym;
    auto [h, f] = canonical_qp_terms(canonical_means(n_components, best.delta_mu), sigma);
    const Vector w = Eigen::Map<const Vector>(best.weights.data(), n_components);
    best.isd = canonical_self_term() + detail::simplex_objective(h, f, w);
    return best;
}

inline void validate_split(const CanonicalSplit& s) {
    if (s.n_components < 1 || s.n_components % 2 == 0) throw Error(ErrorKind::InvalidArgument, "split: N must be odd");
    if (!(s.sigma > 0.0 && s.sigma <= 1.0)) throw Error(ErrorKind::InvalidSigma, "split: sigma must lie in (0, 1]");
    if (!(s.delta_mu >= 0.0)) throw Error(ErrorKind::InvalidArgument, "split: delta_mu must be nonnegative");
    if (static_cast<int>(s.weights.size()) != s.n_components) throw Error(ErrorKind::InvalidArgument, "split: weight count differs from N");
    double total = 0.0;
    for (std::size_t i = 0; i < s.weights.size(); ++i) {
        if (s.weights[i] < 0.0) throw Error(ErrorKind::InvalidArgument, "split: negative weight");
        if (std::abs(s.weights[i] - s.weights[s.weights.size() - 1 - i]) > 1e-8) {
            throw Error(ErrorKind::InvalidArgument, "split: weights are not symmetric");
        }
        total += s.weights[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::InvalidArgument, "split: weights do not sum to one");
}

/// Canonical splits keyed by (N, sigma); immutable once built or loaded.
class SplitLibrary {
public:
    SplitLibrary() = default;
    explicit SplitLibrary(double grid_step) : grid_step_(grid_step) {}

    void insert(CanonicalSplit split) {
        validate_split(split);
        entries_[key(split.n_components, split.sigma)] = std::move(split);
    }

    [[nodiscard]] bool contains(int n, double sigma) const { return entries_.contains(key(n, sigma)); }

    [[nodiscard]] const CanonicalSplit& at(int n, double sigma) const {
        const auto it = entries_.find(key(n, sigma));
        if (it == entries_.end()) {
            throw Error(ErrorKind::MissingSplit, "no cached split for N=" + std::to_string(n) + " sigma=" + std::to_string(sigma));
        }
        return it->second;
    }

    [[nodiscard]] std::vector<CanonicalSplit> entries() const {
        std::vector<CanonicalSplit> out;
        out.reserve(entries_.size());
        for (const auto& [k, v] : entries_) out.push_back(v);
        return out;
    }

    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] double grid_step() const { return grid_step_; }

private:
    using Key = std::pair<int, std::int64_t>;
    static Key key(int n, double sigma) { return {n, std::llround(sigma * 1e9)}; }

    double grid_step_ = SplitGrid{}.step;
    std::map<Key, CanonicalSplit> entries_;
};

inline SplitLibrary build_split_library(const std::vector<int>& ns, const std::vector<double>& sigmas, const SplitGrid& grid = {}) {
    SplitLibrary lib(grid.step);
    for (int n : ns) {
        for (double s : sigmas) lib.insert(optimize_canonical_split(n, s, grid));
    }
    return lib;
}

namespace detail {

/// Adjust the weights so that their left-to-right sum equals `target` bit for bit. The last weight
/// absorbs the rounding error: when the others carry at least half of `target`, the difference
/// target - partial is exact and so is the final addition. Otherwise the heaviest weight is
/// searched over its neighbouring doubles, since the rounded sum is monotone in it.
inline void make_sum_exact(std::vector<double>& weights, double target) {
    const auto sum = [&] {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    };
    if (weights.empty() || sum() == target) return;

    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) partial += weights[i];
    const double last = weights.back();
    weights.back() = target - partial;
    if (weights.back() >= 0.0 && sum() == target) return;
    weights.back() = last;

    std::size_t pivot = 0;
    for (std::size_t i = 1; i < weights.size(); ++i) {
        if (weights[i] > weights[pivot]) pivot = i;
    }
    const double p = weights[pivot];
    const double span = 64.0 * std::abs(target) * std::numeric_limits<double>::epsilon();
    std::int64_t lo = std::bit_cast<std::int64_t>(std::max(p - span, 0.0));
    std::int64_t hi = std::bit_cast<std::int64_t>(p + span);
    while (lo <= hi) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        weights[pivot] = std::bit_cast<double>(mid);
        const double s = sum();
        if (s == target) return;
        if (s < target) lo = mid + 1; else hi = mid - 1;
    }
    weights[pivot] = p;
}

} // namespace detail

/// Replace a mixand by the cached split mapped onto its Gaussian, with the split direction along
/// `axis`. Children keep the parent's discrete hypothesis and their weights sum to the parent's.
inline std::vector<HybridMixand> apply_split(const HybridMixand& parent, const Vector& axis, const CanonicalSplit& split) {
    const Eigen::Index n = parent.gaussian.dim();
    if (axis.size() != n) throw Error(ErrorKind::DimensionMismatch, "apply_split: axis dimension differs from state");
    if (std::abs(axis.norm() - 1.0) > 1e-9) throw Error(ErrorKind::InvalidArgument, "apply_split: axis must be a unit vector");
    if (split.n_components == 1) return {parent};

    const Matrix t = matrix_sqrt(parent.gaussian.covariance);
    const Vector diag = t.diagonal().cwiseAbs();
    if (diag.minCoeff() <= 1e-12 * std::max(diag.maxCoeff(), 1e-300)) {
        throw Error(ErrorKind::SingularCovariance, "apply_split: covariance is singular; regularise before splitting");
    }
    Vector u = t.triangularView<Eigen::Lower>().solve(axis);
    u.normalize();

    // Householder reflection R with R u = e1 (R is symmetric and its own inverse).
    Vector v = u;
    v(0) -= 1.0;
    Matrix r = Matrix::Identity(n, n);
    if (v.squaredNorm() > 1e-30) r -= 2.0 * v * v.transpose() / v.squaredNorm();

    const Matrix m = t * r.transpose();
    const Vector m0 = m.col(0);
    // T R^T diag(sigma^2, 1, ..., 1) R T^T = Sigma - (1 - sigma^2) m0 m0^T
    const Matrix child_cov =
        symmetrize(parent.gaussian.covariance - (1.0 - split.axis_variance()) * m0 * m0.transpose());

    std::vector<int> kept;
    std::vector<double> weights;
    for (int i = 0; i < split.n_components; ++i) {
        const double w = split.weights[static_cast<std::size_t>(i)];
        if (w > 0.0) {
            kept.push_back(i);
            weights.push_back(parent.weight * w);
        }
    }
    detail::make_sum_exact(weights, parent.weight);

    std::vector<HybridMixand> children;
    children.reserve(weights.size());
    for (std::size_t k = 0; k < kept.size(); ++k) {
        HybridMixand c;
        c.weight = weights[k];
        c.discrete = parent.discrete;
        c.gaussian.mean = parent.gaussian.mean + split.offset(kept[k]) * m0;
        c.gaussian.covariance = child_cov;
        children.push_back(std::move(c));
    }
    return children;
}

} // namespace hgmm
