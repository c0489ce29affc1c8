#pragma once

#include "hgmm/core_types.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace hgmm::testing {

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double min_eig = 0.1, double max_eig = 3.0) {
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(min_eig, max_eig);
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = nd(rng);
    }
    Eigen::HouseholderQR<Matrix> qr(a);
    const Matrix q = qr.householderQ();
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = ud(rng);
    return symmetrize(q * d.asDiagonal() * q.transpose());
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
    return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> nd;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
    }
    return m;
}

inline Vector random_unit(std::mt19937_64& rng, Eigen::Index n) { return random_vector(rng, n).normalized(); }

/// Composite trapezoid rule.
inline double trapezoid(const std::function<double(double)>& f, double lo, double hi, int points) {
    const double h = (hi - lo) / (points - 1);
    double s = 0.5 * (f(lo) + f(hi));
    for (int i = 1; i < points - 1; ++i) s += f(lo + h * i);
    return s * h;
}

/// Tensor-product trapezoid rule on a square in 2-D.
inline double trapezoid2(const std::function<double(double, double)>& f, double lo, double hi, int points) {
    const double h = (hi - lo) / (points - 1);
    double s = 0.0;
    for (int i = 0; i < points; ++i) {
        const double wi = (i == 0 || i == points - 1) ? 0.5 : 1.0;
        for (int j = 0; j < points; ++j) {
            const double wj = (j == 0 || j == points - 1) ? 0.5 : 1.0;
            s += wi * wj * f(lo + h * i, lo + h * j);
        }
    }
    return s * h * h;
}

} // namespace hgmm::testing
