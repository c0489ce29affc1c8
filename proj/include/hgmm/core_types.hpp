#pragma once

#include "hgmm/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace hgmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Opaque discrete hypothesis (road segment id, behavioural mode, ...).
using DiscreteState = std::string;

inline constexpr double kSymmetryTol = 1e-9;
inline constexpr double kPsdTol = 1e-9;
inline constexpr double kWeightFloor = 1e-6;

struct Gaussian {
    Vector mean;
    Matrix covariance;

    [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
};

struct HybridMixand {
    double weight = 1.0;
    DiscreteState discrete;
    Gaussian gaussian;
};

struct HybridMixture {
    std::vector<HybridMixand> mixands;
    int time_index = 0;

    [[nodiscard]] std::size_t size() const { return mixands.size(); }
    [[nodiscard]] bool empty() const { return mixands.empty(); }
    [[nodiscard]] Eigen::Index dim() const { return mixands.empty() ? 0 : mixands.front().gaussian.dim(); }
};

/// Plain weighted Gaussian, used where discrete hypotheses do not matter.
struct WeightedGaussian {
    double weight = 1.0;
    Gaussian gaussian;
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_symmetric(const Matrix& m, double rel_tol = kSymmetryTol) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Lower-triangular S with S*S^T = cov. Cholesky first; semidefinite inputs go through an
/// eigen-decomposition with small negative eigenvalues clamped to zero, then are re-triangularised.
inline Matrix matrix_sqrt(const Matrix& cov) {
    if (cov.rows() != cov.cols()) throw Error(ErrorKind::DimensionMismatch, "matrix_sqrt: matrix is not square");
    if (!is_symmetric(cov)) throw Error(ErrorKind::NotSymmetric, "matrix_sqrt: matrix is not symmetric");
    const Eigen::Index n = cov.rows();
    if (n == 0) return Matrix(0, 0);

    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(cov));
    const double trace = std::max(cov.trace(), 0.0);
    const double min_eig = eig.eigenvalues().minCoeff();
    if (min_eig < -kPsdTol * std::max(trace, 1e-300)) {
        throw Error(ErrorKind::IndefiniteMatrix, "matrix_sqrt: eigenvalue " + std::to_string(min_eig) + " below tolerance");
    }
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Matrix a = eig.eigenvectors() * root.asDiagonal();
    // a*a^T = cov; a^T = QR gives a = R^T Q^T, so R^T is a lower-triangular root.
    Eigen::HouseholderQR<Matrix> qr(a.transpose());
    Matrix lower = qr.matrixQR().triangularView<Eigen::Upper>().toDenseMatrix().transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (lower(j, j) < 0.0) lower.col(j) *= -1.0;
    }
    return lower;
}

namespace detail {

inline Eigen::LLT<Matrix> regularized_llt(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return llt;
    const double bump = 1e-12 * std::max(std::abs(cov.trace()), 1e-300);
    llt.compute(cov + bump * Matrix::Identity(cov.rows(), cov.cols()));
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularCovariance, "covariance is not positive definite");
    return llt;
}

inline double log_normal_from_llt(const Eigen::LLT<Matrix>& llt, const Vector& diff) {
    const auto n = static_cast<double>(diff.size());
    const Vector z = llt.matrixL().solve(diff);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (z.squaredNorm() + log_det + n * std::log(2.0 * std::numbers::pi));
}

} // namespace detail

inline double gaussian_log_pdf(const Gaussian& g, const Vector& x) {
    if (x.size() != g.dim() || g.covariance.rows() != g.dim() || g.covariance.cols() != g.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "gaussian_pdf: point and distribution dimensions differ");
    }
    return detail::log_normal_from_llt(detail::regularized_llt(g.covariance), x - g.mean);
}

inline double gaussian_pdf(const Gaussian& g, const Vector& x) { return std::exp(gaussian_log_pdf(g, x)); }

/// N(a | b, cov), the Gaussian product integral used by every ISD term.
inline double normal_overlap(const Vector& a, const Vector& b, const Matrix& cov) {
    return gaussian_pdf(Gaussian{b, cov}, a);
}

struct IsdTerms {
    double j11 = 0.0;
    double j12 = 0.0;
    double j22 = 0.0;
    double isd = 0.0;
};

/// Closed-form integral-squared difference between a Gaussian and a Gaussian mixture.
inline IsdTerms isd_terms(const Gaussian& target, const std::vector<WeightedGaussian>& mix) {
    const Eigen::Index n = target.dim();
    for (const auto& c : mix) {
        if (c.gaussian.dim() != n) throw Error(ErrorKind::DimensionMismatch, "isd_terms: component dimension differs");
    }
    IsdTerms t;
    t.j11 = normal_overlap(target.mean, target.mean, 2.0 * target.covariance);
    for (const auto& c : mix) {
        t.j12 += c.weight * normal_overlap(target.mean, c.gaussian.mean, target.covariance + c.gaussian.covariance);
    }
    for (std::size_t i = 0; i < mix.size(); ++i) {
        const auto& gi = mix[i].gaussian;
        t.j22 += mix[i].weight * mix[i].weight * normal_overlap(gi.mean, gi.mean, 2.0 * gi.covariance);
        for (std::size_t j = i + 1; j < mix.size(); ++j) {
            const auto& gj = mix[j].gaussian;
            t.j22 += 2.0 * mix[i].weight * mix[j].weight * normal_overlap(gi.mean, gj.mean, gi.covariance + gj.covariance);
        }
    }
    t.isd = t.j11 - 2.0 * t.j12 + t.j22;
    return t;
}

/// ISD between two Gaussian mixtures.
inline double isd(const std::vector<WeightedGaussian>& a, const std::vector<WeightedGaussian>& b) {
    auto cross = [](const std::vector<WeightedGaussian>& p, const std::vector<WeightedGaussian>& q) {
        double s = 0.0;
        for (const auto& ci : p) {
            for (const auto& cj : q) {
                if (ci.gaussian.dim() != cj.gaussian.dim()) throw Error(ErrorKind::DimensionMismatch, "isd: dimension differs");
                s += ci.weight * cj.weight *
                     normal_overlap(ci.gaussian.mean, cj.gaussian.mean, ci.gaussian.covariance + cj.gaussian.covariance);
            }
        }
        return s;
    };
    return cross(a, a) - 2.0 * cross(a, b) + cross(b, b);
}

inline std::vector<WeightedGaussian> continuous_part(const HybridMixture& mix) {
    std::vector<WeightedGaussian> out;
    out.reserve(mix.size());
    for (const auto& m : mix.mixands) out.push_back({m.weight, m.gaussian});
    return out;
}

inline Gaussian moments(const std::vector<WeightedGaussian>& mix) {
    if (mix.empty()) throw Error(ErrorKind::EmptyMixture, "mixture_moments: empty mixture");
    const Eigen::Index n = mix.front().gaussian.dim();
    double total = 0.0;
    Vector mean = Vector::Zero(n);
    for (const auto& c : mix) {
        if (c.gaussian.dim() != n) throw Error(ErrorKind::DimensionMismatch, "mixture_moments: dimension differs");
        mean += c.weight * c.gaussian.mean;
        total += c.weight;
    }
    mean /= total;
    Matrix cov = Matrix::Zero(n, n);
    for (const auto& c : mix) {
        const Vector d = c.gaussian.mean - mean;
        cov += c.weight * (c.gaussian.covariance + d * d.transpose());
    }
    cov /= total;
    return {mean, symmetrize(cov)};
}

/// Mean and covariance of the continuous marginal.
inline Gaussian mixture_moments(const HybridMixture& mix) { return moments(continuous_part(mix)); }

inline double total_weight(const HybridMixture& mix) {
    double s = 0.0;
    for (const auto& m : mix.mixands) s += m.weight;
    return s;
}

/// Rescale weights to sum to one; the largest weight absorbs the rounding residue.
inline void normalize(HybridMixture& mix) {
    if (mix.empty()) throw Error(ErrorKind::EmptyMixture, "normalize: empty mixture");
    const double s = total_weight(mix);
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::InvalidArgument, "normalize: nonpositive total weight");
    std::size_t largest = 0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        mix.mixands[i].weight /= s;
        if (mix.mixands[i].weight > mix.mixands[largest].weight) largest = i;
    }
    double others = 0.0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        if (i != largest) others += mix.mixands[i].weight;
    }
    mix.mixands[largest].weight = 1.0 - others;
}

/// Drop mixands below `floor` and renormalise. The heaviest mixand always survives.
inline void apply_weight_floor(HybridMixture& mix, double floor = kWeightFloor) {
    normalize(mix);
    const auto heaviest = std::max_element(mix.mixands.begin(), mix.mixands.end(),
                                           [](const auto& a, const auto& b) { return a.weight < b.weight; });
    const double keep_at_least = heaviest->weight;
    std::erase_if(mix.mixands, [&](const HybridMixand& m) { return m.weight < floor && m.weight < keep_at_least; });
    normalize(mix);
}

inline void validate_gaussian(const Gaussian& g) {
    const Eigen::Index n = g.dim();
    if (g.covariance.rows() != n || g.covariance.cols() != n) {
        throw Error(ErrorKind::DimensionMismatch, "gaussian: covariance shape does not match mean");
    }
    if (!g.mean.allFinite() || !g.covariance.allFinite()) throw Error(ErrorKind::InvalidArgument, "gaussian: non-finite entries");
    if (!is_symmetric(g.covariance)) throw Error(ErrorKind::NotSymmetric, "gaussian: covariance not symmetric");
    if (n == 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(g.covariance), Eigen::EigenvaluesOnly);
    const double trace = std::max(g.covariance.trace(), 1e-300);
    if (eig.eigenvalues().minCoeff() < -kPsdTol * trace) {
        throw Error(ErrorKind::IndefiniteMatrix, "gaussian: covariance has a negative eigenvalue");
    }
}

/// Checks weights, shared dimension and normalisation of a mixture.
inline void validate_mixture(const HybridMixture& mix, double sum_tol = 1e-9) {
    if (mix.empty()) throw Error(ErrorKind::EmptyMixture, "mixture has no mixands");
    const Eigen::Index n = mix.dim();
    for (const auto& m : mix.mixands) {
        if (!(m.weight > 0.0)) throw Error(ErrorKind::InvalidArgument, "mixand weight must be positive");
        if (m.gaussian.dim() != n) throw Error(ErrorKind::DimensionMismatch, "mixands differ in state dimension");
        validate_gaussian(m.gaussian);
    }
    if (std::abs(total_weight(mix) - 1.0) > sum_tol) throw Error(ErrorKind::InvalidArgument, "mixture weights do not sum to one");
}

/// Mixture density of the continuous marginal (discrete hypotheses summed out).
inline double mixture_pdf(const std::vector<WeightedGaussian>& mix, const Vector& x) {
    double p = 0.0;
    for (const auto& c : mix) p += c.weight * gaussian_pdf(c.gaussian, x);
    return p;
}

} // namespace hgmm
