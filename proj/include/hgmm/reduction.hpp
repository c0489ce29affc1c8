#pragma once

#include "hgmm/core_types.hpp"
#include "hgmm/log.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace hgmm {

struct ReductionConfig {
    int max_mixands = 10;
};

namespace detail {

inline double log_det(const Matrix& cov) {
    const auto llt = regularized_llt(cov);
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Moment-preserving merge of two mixands.
inline HybridMixand merge_pair(const HybridMixand& a, const HybridMixand& b) {
    const double w = a.weight + b.weight;
    const double fa = a.weight / w;
    const double fb = b.weight / w;
    const Vector d = a.gaussian.mean - b.gaussian.mean;
    HybridMixand m;
    m.weight = w;
    m.discrete = a.discrete;
    m.gaussian.mean = fa * a.gaussian.mean + fb * b.gaussian.mean;
    m.gaussian.covariance =
        symmetrize(fa * a.gaussian.covariance + fb * b.gaussian.covariance + fa * fb * d * d.transpose());
    return m;
}

} // namespace detail

/// Upper bound on the KL discrimination incurred by merging two mixands.
inline double runnalls_dissimilarity(const HybridMixand& a, const HybridMixand& b) {
    const HybridMixand m = detail::merge_pair(a, b);
    return 0.5 * (m.weight * detail::log_det(m.gaussian.covariance) - a.weight * detail::log_det(a.gaussian.covariance) -
                  b.weight * detail::log_det(b.gaussian.covariance));
}

/// Greedy pairwise reduction to at most `cfg.max_mixands` mixands. Only mixands that share a
/// discrete hypothesis are merged. If there are more hypotheses than the cap allows, the lightest
/// hypotheses are dropped (with a warning) and the remainder renormalised.
inline HybridMixture reduce(const HybridMixture& mix, const ReductionConfig& cfg) {
    if (cfg.max_mixands < 1) throw Error(ErrorKind::InvalidArgument, "reduce: max_mixands must be at least 1");
    if (mix.size() <= static_cast<std::size_t>(cfg.max_mixands)) return mix;

    HybridMixture out = mix;

    std::map<DiscreteState, double> hypothesis_weight;
    for (const auto& m : out.mixands) hypothesis_weight[m.discrete] += m.weight;
    if (hypothesis_weight.size() > static_cast<std::size_t>(cfg.max_mixands)) {
        std::vector<std::pair<double, DiscreteState>> order;
        for (const auto& [alpha, w] : hypothesis_weight) order.emplace_back(w, alpha);
        std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        std::map<DiscreteState, bool> keep;
        for (std::size_t i = 0; i < order.size(); ++i) keep[order[i].second] = i < static_cast<std::size_t>(cfg.max_mixands);
        const std::size_t dropped = order.size() - static_cast<std::size_t>(cfg.max_mixands);
        std::erase_if(out.mixands, [&](const HybridMixand& m) { return !keep[m.discrete]; });
        normalize(out);
        log_warning("reduce: " + std::to_string(dropped) + " discrete hypotheses exceed the mixand cap and were dropped");
    }

    const std::size_t n = out.size();
    std::vector<bool> alive(n, true);
    std::vector<double> logdet(n);
    for (std::size_t i = 0; i < n; ++i) logdet[i] = detail::log_det(out.mixands[i].gaussian.covariance);

    auto cost = [&](std::size_t i, std::size_t j) {
        const HybridMixand m = detail::merge_pair(out.mixands[i], out.mixands[j]);
        return 0.5 * (m.weight * detail::log_det(m.gaussian.covariance) - out.mixands[i].weight * logdet[i] -
                      out.mixands[j].weight * logdet[j]);
    };

    constexpr double inf = std::numeric_limits<double>::infinity();
    // best[i]: cheapest partner j > i sharing the hypothesis.
    std::vector<double> best_cost(n, inf);
    std::vector<std::size_t> best_partner(n, n);
    auto refresh_row = [&](std::size_t i) {
        best_cost[i] = inf;
        best_partner[i] = n;
        if (!alive[i]) return;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!alive[j] || out.mixands[j].discrete != out.mixands[i].discrete) continue;
            const double c = cost(i, j);
            if (c < best_cost[i]) {
                best_cost[i] = c;
                best_partner[i] = j;
            }
        }
    };
    for (std::size_t i = 0; i < n; ++i) refresh_row(i);

    std::size_t count = n;
    while (count > static_cast<std::size_t>(cfg.max_mixands)) {
        std::size_t bi = n;
        double bc = inf;
        for (std::size_t i = 0; i < n; ++i) {
            if (alive[i] && best_partner[i] < n && best_cost[i] < bc) {
                bc = best_cost[i];
                bi = i;
            }
        }
        if (bi == n) break;
        const std::size_t bj = best_partner[bi];
        out.mixands[bi] = detail::merge_pair(out.mixands[bi], out.mixands[bj]);
        logdet[bi] = detail::log_det(out.mixands[bi].gaussian.covariance);
        alive[bj] = false;
        --count;
        refresh_row(bi);
        for (std::size_t k = 0; k < bi; ++k) {
            if (!alive[k] || out.mixands[k].discrete != out.mixands[bi].discrete) continue;
            if (best_partner[k] == bi || best_partner[k] == bj) {
                refresh_row(k);
            } else {
                const double c = cost(k, bi);
                if (c < best_cost[k] || (c == best_cost[k] && bi < best_partner[k])) {
                    best_cost[k] = c;
                    best_partner[k] = bi;
                }
            }
        }
        for (std::size_t k = bi + 1; k < bj; ++k) {
            if (alive[k] && best_partner[k] == bj) refresh_row(k);
        }
    }

    std::vector<HybridMixand> kept;
    kept.reserve(count);
    for (std::size_t i = 0; i < n; ++i) {
        if (alive[i]) kept.push_back(std::move(out.mixands[i]));
    }
    out.mixands = std::move(kept);
    return out;
}

} // namespace hgmm
