#pragma once

#include "hgmm/core_types.hpp"

#include <Eigen/QR>

#include <limits>
#include <optional>

namespace hgmm {

/// How e_res is reported. `raw` is the Frobenius norm of the affine-fit residual (state units);
/// `scaled` divides it by sqrt(2 n_x + 1) and by sqrt(trace of the prior covariance).
enum class ResidualScaling { raw, scaled };

struct LinearityOptions {
    double e_res_max = std::numeric_limits<double>::infinity();
    ResidualScaling scaling = ResidualScaling::scaled;
    /// Trace of the prior covariance; required for the scaled mode.
    std::optional<double> prior_trace;
};

struct LinearityReport {
    double e_res = 0.0;
    double e_res_raw = 0.0;
    Matrix point_residuals;
    Vector split_axis;
    bool passed = true;
    bool rank_deficient = false;
    Eigen::Index rank = 0;
};

namespace detail {

inline constexpr double kRankTol = 1e-10;
inline constexpr double kEigenTieTol = 1e-10;

/// Principal eigenvector of a symmetric PSD matrix. When the top eigenvalue is repeated, the
/// coordinate axes e_0, e_1, ... are projected onto the tied eigenspace and the first non-negligible
/// projection wins. The sign is fixed so the first non-zero component is positive.
inline Vector principal_axis(const Matrix& m) {
    const Eigen::Index n = m.rows();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
    const Vector& values = eig.eigenvalues();
    const double top = values(n - 1);
    const double scale = std::max(std::abs(top), 1e-300);
    Eigen::Index first_tied = n - 1;
    while (first_tied > 0 && (top - values(first_tied - 1)) <= kEigenTieTol * scale) --first_tied;
    if (top <= 0.0) first_tied = 0;

    Vector axis;
    if (first_tied == n - 1) {
        axis = eig.eigenvectors().col(n - 1);
    } else {
        const Matrix basis = eig.eigenvectors().rightCols(n - first_tied);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vector proj = basis * basis.row(i).transpose();
            if (proj.norm() > 1e-6) {
                axis = proj;
                break;
            }
        }
    }
    axis.normalize();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(axis(i)) > 1e-12) {
            if (axis(i) < 0.0) axis = -axis;
            break;
        }
    }
    return axis;
}

} // namespace detail

/// Residual of the best affine model post ~ A*pre + b over the state sigma points, computed from an
/// LQ factorisation of [pre; 1^T] without forming A or b.
///
/// `pre_points` is n_x x (2 n_x + 1) and `post_points` is m x (2 n_x + 1). The returned split axis is
/// the principal eigenvector of sum_j |E_j| (pre_j - mu)(pre_j - mu)^T, where E_j is the residual of
/// point j and mu the centroid of the pre points.
inline LinearityReport assess_linearity(const Matrix& pre_points, const Matrix& post_points,
                                        const LinearityOptions& opts = {}) {
    const Eigen::Index n = pre_points.rows();
    const Eigen::Index count = pre_points.cols();
    if (count != 2 * n + 1 || post_points.cols() != count) {
        throw Error(ErrorKind::DimensionMismatch, "assess_linearity: expected 2 n_x + 1 points before and after propagation");
    }

    Matrix augmented(n + 1, count);
    augmented.topRows(n) = pre_points;
    augmented.row(n).setOnes();

    // [pre; 1] = L Q with L = [L0, 0]; here computed as the QR factorisation of the transpose.
    Eigen::ColPivHouseholderQR<Matrix> qr(augmented.transpose());
    qr.setThreshold(detail::kRankTol);
    const Eigen::Index rank = qr.rank();
    const Matrix q = qr.householderQ();
    const Matrix residual_basis = q.rightCols(count - rank);
    const Matrix explained_residual = post_points * residual_basis;

    LinearityReport report;
    report.rank = rank;
    report.rank_deficient = rank < n + 1;
    report.point_residuals = explained_residual * residual_basis.transpose();
    report.e_res_raw = explained_residual.norm();

    if (opts.scaling == ResidualScaling::scaled) {
        if (!opts.prior_trace || !(*opts.prior_trace > 0.0)) {
            throw Error(ErrorKind::InvalidArgument, "assess_linearity: scaled mode needs a positive prior trace");
        }
        report.e_res = report.e_res_raw / std::sqrt(static_cast<double>(count)) / std::sqrt(*opts.prior_trace);
    } else {
        report.e_res = report.e_res_raw;
    }

    const Vector centroid = pre_points.rowwise().mean();
    Matrix moment = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < count; ++j) {
        const Vector d = pre_points.col(j) - centroid;
        moment += report.point_residuals.col(j).norm() * d * d.transpose();
    }
    report.split_axis = n > 0 ? detail::principal_axis(moment) : Vector();
    report.passed = report.rank_deficient || report.e_res <= opts.e_res_max;
    return report;
}

} // namespace hgmm
