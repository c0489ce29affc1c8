#pragma once

#include "hgmm/core_types.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace hgmm::models {

using Point2 = Eigen::Vector2d;

/// Closest-point projection of a point onto a polyline.
struct Projection {
    /// Arc length of the foot point; below 0 or beyond the length when the point lies past an end.
    double s = 0.0;
    /// Signed lateral offset, positive to the left of the direction of travel.
    double lateral = 0.0;
    /// Euclidean distance to the polyline (ends are not extended).
    double distance = 0.0;
};

/// Piecewise-linear curve with cumulative arc length.
class Polyline {
public:
    Polyline() = default;

    explicit Polyline(std::vector<Point2> points) : points_(std::move(points)) {
        if (points_.size() < 2) throw Error(ErrorKind::InvalidArgument, "Polyline: at least two points are required");
        cumulative_.assign(points_.size(), 0.0);
        for (std::size_t i = 1; i < points_.size(); ++i) {
            const double len = (points_[i] - points_[i - 1]).norm();
            if (!(len > 0.0)) throw Error(ErrorKind::InvalidArgument, "Polyline: repeated consecutive points");
            cumulative_[i] = cumulative_[i - 1] + len;
        }
    }

    [[nodiscard]] const std::vector<Point2>& points() const { return points_; }
    [[nodiscard]] double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
    [[nodiscard]] const Point2& front() const { return points_.front(); }
    [[nodiscard]] const Point2& back() const { return points_.back(); }

    /// Unit direction of the first and last pieces.
    [[nodiscard]] Point2 start_direction() const { return (points_[1] - points_[0]).normalized(); }
    [[nodiscard]] Point2 end_direction() const {
        const std::size_t n = points_.size();
        return (points_[n - 1] - points_[n - 2]).normalized();
    }

    /// Point at arc length s, extrapolated linearly past either end.
    [[nodiscard]] Point2 point_at(double s) const {
        if (s <= 0.0) return points_.front() + s * start_direction();
        if (s >= length()) return points_.back() + (s - length()) * end_direction();
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
        const std::size_t i = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
        const double t = (s - cumulative_[i]) / (cumulative_[i + 1] - cumulative_[i]);
        return points_[i] + t * (points_[i + 1] - points_[i]);
    }

    /// Unit tangent at arc length s; the end pieces' directions are used past either end.
    [[nodiscard]] Point2 direction_at(double s) const {
        if (s <= 0.0) return start_direction();
        if (s >= length()) return end_direction();
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
        const std::size_t i = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
        return (points_[i + 1] - points_[i]).normalized();
    }

    /// Closest-point projection. The first and last pieces are treated as rays so that `s` and
    /// `lateral` stay meaningful before the start and past the end.
    [[nodiscard]] Projection project(const Point2& p) const {
        Projection best;
        double best_d2 = std::numeric_limits<double>::infinity();
        double best_true = std::numeric_limits<double>::infinity();
        const std::size_t pieces = points_.size() - 1;
        for (std::size_t i = 0; i < pieces; ++i) {
            const Point2 a = points_[i];
            const Point2 d = points_[i + 1] - a;
            const double len2 = d.squaredNorm();
            const double raw_t = (p - a).dot(d) / len2;
            double t = std::clamp(raw_t, 0.0, 1.0);
            const double true_d2 = (p - (a + t * d)).squaredNorm();
            best_true = std::min(best_true, true_d2);
            if (i == 0 && raw_t < 0.0) t = raw_t;
            if (i + 1 == pieces && raw_t > 1.0) t = raw_t;
            const Point2 foot = a + t * d;
            const double d2 = (p - foot).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                const double len = std::sqrt(len2);
                best.s = cumulative_[i] + t * len;
                const Point2 r = p - foot;
                best.lateral = (d.x() * r.y() - d.y() * r.x()) / len;
            }
        }
        best.distance = std::sqrt(best_true);
        return best;
    }

    /// Distance from p to the curve without extension past the ends.
    [[nodiscard]] double distance(const Point2& p) const { return project(p).distance; }

private:
    std::vector<Point2> points_;
    std::vector<double> cumulative_;
};

struct RoadSegment {
    std::string id;
    Polyline centerline;
    double half_width = 1.75;
    std::vector<std::string> successors;
};

/// Directed lane-segment graph. Segments with several successors form intersections.
class RoadNetwork {
public:
    /// Tolerance on the gap between a segment end and the start of each successor.
    static constexpr double kContinuityTol = 0.01;

    RoadNetwork() = default;

    explicit RoadNetwork(std::vector<RoadSegment> segments) : segments_(std::move(segments)) {
        for (std::size_t i = 0; i < segments_.size(); ++i) {
            if (!index_.emplace(segments_[i].id, i).second) {
                throw Error(ErrorKind::InvalidArgument, "RoadNetwork: duplicate segment id '" + segments_[i].id + "'");
            }
        }
        for (const auto& s : segments_) {
            if (!(s.half_width > 0.0)) throw Error(ErrorKind::InvalidArgument, "RoadNetwork: segment '" + s.id + "' has non-positive half width");
            for (const auto& next : s.successors) {
                const auto it = index_.find(next);
                if (it == index_.end()) {
                    throw Error(ErrorKind::InvalidArgument, "RoadNetwork: segment '" + s.id + "' names unknown successor '" + next + "'");
                }
                const double gap = (segments_[it->second].centerline.front() - s.centerline.back()).norm();
                if (gap > kContinuityTol) {
                    throw Error(ErrorKind::InvalidArgument, "RoadNetwork: segment '" + s.id + "' is not continuous with '" + next + "'");
                }
            }
        }
        build_routes();
    }

    [[nodiscard]] const std::vector<RoadSegment>& segments() const { return segments_; }
    [[nodiscard]] bool contains(const std::string& id) const { return index_.contains(id); }

    [[nodiscard]] const RoadSegment& segment(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "RoadNetwork: unknown segment '" + id + "'");
        return segments_[it->second];
    }

    /// Path followed while on a segment: its centerline, then the chain of unique successors up to
    /// `kRouteReach` metres; when the next segment is ambiguous or absent the path continues straight.
    [[nodiscard]] const Polyline& route(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "RoadNetwork: unknown segment '" + id + "'");
        return routes_[it->second];
    }

    static constexpr double kRouteReach = 60.0;

private:
    void build_routes() {
        routes_.clear();
        routes_.reserve(segments_.size());
        for (const auto& seg : segments_) {
            std::vector<Point2> pts = seg.centerline.points();
            double reach = 0.0;
            const RoadSegment* cur = &seg;
            std::size_t hops = 0;
            while (reach < kRouteReach && cur->successors.size() == 1 && hops < segments_.size()) {
                const RoadSegment& next = segment(cur->successors.front());
                const auto& np = next.centerline.points();
                for (std::size_t i = 0; i < np.size(); ++i) {
                    if (i == 0 && (np[0] - pts.back()).norm() < 1e-9) continue;
                    if (i == 0) {
                        pts.back() = np[0];
                        continue;
                    }
                    pts.push_back(np[i]);
                }
                reach += next.centerline.length();
                cur = &next;
                ++hops;
            }
            if (reach < kRouteReach) {
                const Point2 dir = (pts[pts.size() - 1] - pts[pts.size() - 2]).normalized();
                pts.push_back(pts.back() + (kRouteReach - reach) * dir);
            }
            routes_.emplace_back(std::move(pts));
        }
    }

    std::vector<RoadSegment> segments_;
    std::map<std::string, std::size_t> index_;
    std::vector<Polyline> routes_;
};

/// Points along a circular arc from angle a0 to a1 (radians) about `center`.
inline std::vector<Point2> arc_points(const Point2& center, double radius, double a0, double a1, int pieces = 24) {
    std::vector<Point2> pts;
    pts.reserve(static_cast<std::size_t>(pieces) + 1);
    for (int i = 0; i <= pieces; ++i) {
        const double a = a0 + (a1 - a0) * i / pieces;
        pts.emplace_back(center.x() + radius * std::cos(a), center.y() + radius * std::sin(a));
    }
    return pts;
}

/// Straight road along +x from x = -100 m to x = 100 m.
inline RoadNetwork straight_road(double half_width = 1.75) {
    return RoadNetwork({{"road", Polyline({Point2(-100.0, 0.0), Point2(100.0, 0.0)}), half_width, {}}});
}

/// Eastbound approach ending at the origin, a 90 degree left arc of the given radius, then a
/// northbound exit of 60 m.
inline RoadNetwork left_turn(double radius = 10.0, double half_width = 1.75) {
    const double pi = std::numbers::pi;
    std::vector<RoadSegment> segs;
    segs.push_back({"approach", Polyline({Point2(-100.0, 0.0), Point2(0.0, 0.0)}), half_width, {"turn"}});
    segs.push_back({"turn", Polyline(arc_points(Point2(0.0, radius), radius, -pi / 2.0, 0.0)), half_width, {"exit"}});
    segs.push_back({"exit", Polyline({Point2(radius, radius), Point2(radius, radius + 60.0)}), half_width, {}});
    return RoadNetwork(std::move(segs));
}

/// Eastbound approach ending `lead_in` metres before the junction at the origin, then a three-way
/// choice. Each branch starts with the straight lead-in and continues with a left arc, a straight
/// connector of length 2R or a right arc (all of radius R), followed by a 60 m exit.
inline RoadNetwork intersection(double radius = 6.0, double half_width = 1.75, double lead_in = 10.0) {
    const double pi = std::numbers::pi;
    const double r = radius;
    if (!(lead_in > 0.0)) throw Error(ErrorKind::InvalidArgument, "intersection: lead_in must be positive");
    const Point2 decision(-lead_in, 0.0);
    const auto with_lead_in = [&](std::vector<Point2> pts) {
        pts.insert(pts.begin(), decision);
        return Polyline(std::move(pts));
    };
    std::vector<RoadSegment> segs;
    segs.push_back({"approach", Polyline({Point2(-100.0, 0.0), decision}), half_width, {"left", "straight", "right"}});
    segs.push_back({"left", with_lead_in(arc_points(Point2(0.0, r), r, -pi / 2.0, 0.0)), half_width, {"exit_north"}});
    segs.push_back({"straight", Polyline({decision, Point2(2.0 * r, 0.0)}), half_width, {"exit_east"}});
    segs.push_back({"right", with_lead_in(arc_points(Point2(0.0, -r), r, pi / 2.0, 0.0)), half_width, {"exit_south"}});
    segs.push_back({"exit_north", Polyline({Point2(r, r), Point2(r, r + 60.0)}), half_width, {}});
    segs.push_back({"exit_east", Polyline({Point2(2.0 * r, 0.0), Point2(2.0 * r + 60.0, 0.0)}), half_width, {}});
    segs.push_back({"exit_south", Polyline({Point2(r, -r), Point2(r, -r - 60.0)}), half_width, {}});
    return RoadNetwork(std::move(segs));
}

} // namespace hgmm::models
