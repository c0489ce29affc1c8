#pragma once

#include "hgmm/anticipation.hpp"
#include "hgmm/models/road_network.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace hgmm::models {

/// Parameters of the 4-state bicycle (x, y, v, theta) and its path-following controller.
struct BicycleParams {
    /// Steering gain l in theta' = theta + dt * l * v * (u2 + v2).
    double l = 0.35;
    double dt = 0.1;
    /// Process noise on (u1, u2).
    Matrix q = (Matrix(2, 2) << 0.25, 0.0, 0.0, 0.01).finished();
    double target_speed = 10.0;
    /// Proportional speed gain (1/s).
    double k_v = 1.0;
    /// Pure-pursuit lookahead distance (m).
    double lookahead = 5.0;
    /// Curvature added per unit of sin(heading error) to damp the pure-pursuit loop (1/m).
    double heading_gain = 0.2;
    /// Throttle saturation (m/s^2).
    double a_max = 3.0;
    /// Steering saturation.
    double u2_max = 0.5;
    /// A point further than this many lane half-widths from its route is off the network.
    double off_network_factor = 3.0;
};

struct Controls {
    double u1 = 0.0;
    double u2 = 0.0;
    bool off_network = false;
};

/// Bicycle update with controls u and control noise v.
inline Vector bicycle_step(const Vector& x, double u1, double u2, const Vector& v, const BicycleParams& p) {
    Vector out(4);
    out(0) = x(0) + p.dt * std::cos(x(3)) * x(2);
    out(1) = x(1) + p.dt * std::sin(x(3)) * x(2);
    out(2) = x(2) + p.dt * (u1 + v(0));
    out(3) = x(3) + p.dt * p.l * x(2) * (u2 + v(1));
    return out;
}

/// Bicycle robot on a road network. The discrete state is the id of the current road segment; a
/// mixand leaves its segment once the along-track position of its mean passes the segment end and
/// then takes each successor with equal probability.
class BicycleModel final : public DynamicsModel {
public:
    BicycleModel(RoadNetwork network, BicycleParams params = {})
        : network_(std::move(network)), params_(std::move(params)), noise_{params_.q} {
        if (params_.q.rows() != 2 || params_.q.cols() != 2) throw Error(ErrorKind::DimensionMismatch, "BicycleModel: Q must be 2x2");
        if (Eigen::LLT<Matrix>(params_.q).info() != Eigen::Success) {
            throw Error(ErrorKind::IndefiniteMatrix, "BicycleModel: Q must be positive definite");
        }
    }

    [[nodiscard]] Eigen::Index state_dim() const override { return 4; }
    [[nodiscard]] const ProcessNoise& noise() const override { return noise_; }
    [[nodiscard]] const RoadNetwork& network() const { return network_; }
    [[nodiscard]] const BicycleParams& params() const { return params_; }

    [[nodiscard]] std::vector<Transition> discrete_successors(const DiscreteState& alpha, const Gaussian& g, int k) const override {
        return point_successors(alpha, g.mean, k);
    }

    [[nodiscard]] std::vector<Transition> point_successors(const DiscreteState& alpha, const Vector& x, int) const override {
        const RoadSegment& seg = network_.segment(alpha);
        if (seg.successors.empty()) return {{alpha, 1.0}};
        const Projection proj = seg.centerline.project(Point2(x(0), x(1)));
        if (proj.s < seg.centerline.length()) return {{alpha, 1.0}};
        std::vector<Transition> out;
        const double prob = 1.0 / static_cast<double>(seg.successors.size());
        for (const auto& next : seg.successors) out.push_back({next, prob});
        return out;
    }

    /// Controller h(x, alpha): proportional speed tracking and pure pursuit on the route of alpha.
    [[nodiscard]] Controls controls(const DiscreteState& alpha, const Vector& x) const {
        const RoadSegment& seg = network_.segment(alpha);
        const Polyline& route = network_.route(alpha);
        const Point2 pos(x(0), x(1));
        const Projection proj = route.project(pos);
        Controls c;
        if (proj.distance > params_.off_network_factor * seg.half_width) {
            c.off_network = true;
            return c;
        }
        c.u1 = std::clamp(params_.k_v * (params_.target_speed - x(2)), -params_.a_max, params_.a_max);
        const Point2 target = route.point_at(proj.s + params_.lookahead);
        const Point2 d = target - pos;
        const double eta = std::remainder(std::atan2(d.y(), d.x()) - x(3), 2.0 * std::numbers::pi);
        const Point2 tangent = route.direction_at(proj.s);
        const double heading_error = std::atan2(tangent.y(), tangent.x()) - x(3);
        const double curvature = 2.0 * std::sin(eta) / params_.lookahead + params_.heading_gain * std::sin(heading_error);
        c.u2 = std::clamp(curvature / params_.l, -params_.u2_max, params_.u2_max);
        return c;
    }

    [[nodiscard]] Vector propagate(const DiscreteState& alpha_next, const Vector& x, const Vector& v, int) const override {
        if (x.size() != 4 || v.size() != 2) throw Error(ErrorKind::DimensionMismatch, "BicycleModel: expected a 4-state and 2 noise inputs");
        if (!x.allFinite()) throw Error(ErrorKind::ModelEvaluationFailure, "BicycleModel: non-finite state");
        const Controls c = controls(alpha_next, x);
        if (c.off_network) anomalies_.fetch_add(1, std::memory_order_relaxed);
        return bicycle_step(x, c.u1, c.u2, v, params_);
    }

    [[nodiscard]] long take_anomaly_count() const override { return anomalies_.exchange(0); }

private:
    RoadNetwork network_;
    BicycleParams params_;
    ProcessNoise noise_;
    mutable std::atomic<long> anomalies_{0};
};

/// A single-obstacle anticipation problem.
struct Scenario {
    std::string name;
    std::string model = "bicycle";
    RoadNetwork network;
    HybridMixture initial;
    EngineConfig config;
    BicycleParams params;
    std::uint64_t seed = 1;
};

/// Initial state estimate used by the bundled scenarios: 15 m before the origin on the eastbound
/// approach, heading east at the target speed. The covariance corresponds to standard deviations of
/// 1 m in position, 2 m/s in speed and 0.2 rad in heading.
inline HybridMixture default_initial_estimate(const std::string& alpha, double x0 = -15.0) {
    HybridMixture mix;
    Gaussian g;
    g.mean = (Vector(4) << x0, 0.0, 10.0, 0.0).finished();
    g.covariance = Vector((Vector(4) << 1.0, 1.0, 4.0, 0.04).finished()).asDiagonal();
    mix.mixands.push_back({1.0, alpha, g});
    return mix;
}

inline Scenario make_scenario(const std::string& kind, double radius = 0.0) {
    Scenario s;
    s.name = kind;
    if (kind == "straight") {
        s.network = straight_road();
        s.initial = default_initial_estimate("road");
        s.seed = 11;
    } else if (kind == "turn") {
        s.network = left_turn(radius > 0.0 ? radius : 10.0);
        s.initial = default_initial_estimate("approach");
        s.seed = 12;
    } else if (kind == "intersection") {
        s.network = intersection(radius > 0.0 ? radius : 6.0);
        s.initial = default_initial_estimate("approach");
        s.seed = 13;
    } else {
        throw Error(ErrorKind::InvalidArgument, "unknown scenario kind '" + kind + "' (expected straight, turn or intersection)");
    }
    s.config.dt = s.params.dt;
    s.config.horizon = 3.5;
    s.config.scaling = ResidualScaling::raw;
    return s;
}

} // namespace hgmm::models
