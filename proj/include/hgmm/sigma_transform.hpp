#pragma once

#include "hgmm/core_types.hpp"

#include <concepts>
#include <utility>

namespace hgmm {

struct ProcessNoise {
    Matrix covariance = Matrix(0, 0);

    [[nodiscard]] Eigen::Index dim() const { return covariance.rows(); }

    /// Zero-dimensional noise; sigma sets then carry only the 1 + 2 n_x state points.
    static ProcessNoise none() { return {}; }
};

/// Sigma points for a state Gaussian augmented with process noise. Column j of `state_points`
/// pairs with column j of `noise_points`; there are 1 + 2 n_x + 2 n_v columns.
struct SigmaSet {
    Matrix state_points;
    Matrix noise_points;
    double lambda = 0.0;
    double gamma = 0.0;

    [[nodiscard]] Eigen::Index state_dim() const { return state_points.rows(); }
    [[nodiscard]] Eigen::Index noise_dim() const { return noise_points.rows(); }
    [[nodiscard]] Eigen::Index count() const { return state_points.cols(); }
    /// Number of leading columns that carry state uncertainty (the rest perturb only the noise).
    [[nodiscard]] Eigen::Index state_block() const { return 1 + 2 * state_dim(); }
};

struct RecombinationWeights {
    Vector mean_weights;
    Vector cov_weights;
};

/// Default scaling: lambda = 3 - (n_x + n_v).
inline double default_lambda(Eigen::Index n_x, Eigen::Index n_v) { return 3.0 - static_cast<double>(n_x + n_v); }

inline RecombinationWeights recombination_weights(Eigen::Index n_x, Eigen::Index n_v, double lambda) {
    const double n = static_cast<double>(n_x + n_v);
    const Eigen::Index count = 1 + 2 * (n_x + n_v);
    RecombinationWeights w;
    w.mean_weights = Vector::Constant(count, 1.0 / (2.0 * (lambda + n)));
    w.cov_weights = w.mean_weights;
    w.mean_weights(0) = lambda / (lambda + n);
    w.cov_weights(0) = lambda / (lambda + n) + 2.0;
    return w;
}

inline RecombinationWeights recombination_weights(const SigmaSet& s) {
    return recombination_weights(s.state_dim(), s.noise_dim(), s.lambda);
}

inline SigmaSet generate_sigma_points(const Gaussian& g, const ProcessNoise& noise, double lambda) {
    const Eigen::Index nx = g.dim();
    const Eigen::Index nv = noise.dim();
    if (g.covariance.rows() != nx || g.covariance.cols() != nx) {
        throw Error(ErrorKind::DimensionMismatch, "generate_sigma_points: covariance shape does not match mean");
    }
    if (!(lambda > -static_cast<double>(nx + nv))) {
        throw Error(ErrorKind::InvalidArgument, "generate_sigma_points: lambda must exceed -(n_x + n_v)");
    }
    SigmaSet s;
    s.lambda = lambda;
    s.gamma = std::sqrt(static_cast<double>(nx + nv) + lambda);
    const Eigen::Index count = 1 + 2 * nx + 2 * nv;
    s.state_points = g.mean.replicate(1, count);
    s.noise_points = Matrix::Zero(nv, count);

    const Matrix sx = s.gamma * matrix_sqrt(g.covariance);
    for (Eigen::Index j = 0; j < nx; ++j) {
        s.state_points.col(1 + j) += sx.col(j);
        s.state_points.col(1 + nx + j) -= sx.col(j);
    }
    if (nv > 0) {
        const Matrix sv = s.gamma * matrix_sqrt(noise.covariance);
        for (Eigen::Index j = 0; j < nv; ++j) {
            s.noise_points.col(1 + 2 * nx + j) = sv.col(j);
            s.noise_points.col(1 + 2 * nx + nv + j) = -sv.col(j);
        }
    }
    return s;
}

/// Continuous dynamics evaluated on one (state, noise) pair under discrete hypothesis alpha.
template <typename F>
concept ContinuousDynamics = std::invocable<const F&, const DiscreteState&, const Vector&, const Vector&> &&
    std::convertible_to<std::invoke_result_t<const F&, const DiscreteState&, const Vector&, const Vector&>, Vector>;

template <ContinuousDynamics F>
Matrix propagate_points(const SigmaSet& s, const DiscreteState& alpha_next, const F& f) {
    Matrix out;
    for (Eigen::Index j = 0; j < s.count(); ++j) {
        const Vector x = s.state_points.col(j);
        const Vector v = s.noise_points.col(j);
        Vector y = f(alpha_next, x, v);
        if (j == 0) out.resize(y.size(), s.count());
        if (y.size() != out.rows()) throw Error(ErrorKind::DimensionMismatch, "propagate_points: dynamics changed output size");
        out.col(j) = std::move(y);
    }
    return out;
}

/// Symmetrise, and clamp negative eigenvalues to zero if the matrix is not PSD.
inline Matrix clamp_psd(const Matrix& cov) {
    Matrix sym = symmetrize(cov);
    if (sym.rows() == 0) return sym;
    Eigen::LDLT<Matrix> ldlt(sym);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() >= 0.0).all()) return sym;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    return symmetrize(eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose());
}

inline Gaussian recombine(const Matrix& points, const RecombinationWeights& w) {
    if (points.cols() != w.mean_weights.size() || points.cols() != w.cov_weights.size()) {
        throw Error(ErrorKind::DimensionMismatch, "recombine: point count does not match weights");
    }
    const Vector mean = points * w.mean_weights;
    const Matrix centered = points.colwise() - mean;
    const Matrix cov = centered * w.cov_weights.asDiagonal() * centered.transpose();
    if (!mean.allFinite() || !cov.allFinite()) {
        throw Error(ErrorKind::ModelEvaluationFailure, "recombine: propagated moments are not finite");
    }
    return {mean, clamp_psd(cov)};
}

} // namespace hgmm
