#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "hsim/errors.hpp"

namespace hsim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

// Rotate v by -theta (into a frame whose x-axis points along theta).
inline Vec2 to_frame(const Vec2& v, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * v.x + s * v.y, -s * v.x + c * v.y};
}

// Piecewise-linear curve with arc-length parameterization.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> pts) : pts_(std::move(pts)) {
    if (pts_.size() < 2) throw ValidationError("polyline needs at least 2 points");
    cum_.resize(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i)
      cum_[i] = cum_[i - 1] + distance(pts_[i - 1], pts_[i]);
  }

  const std::vector<Vec2>& points() const { return pts_; }
  double length() const { return cum_.back(); }

  // Point at arc length s, clamped to [0, length].
  Vec2 point_at(double s) const {
    if (s <= 0.0) return pts_.front();
    if (s >= length()) return pts_.back();
    std::size_t i = segment_index(s);
    const double t = (s - cum_[i]) / (cum_[i + 1] - cum_[i]);
    return pts_[i] + (pts_[i + 1] - pts_[i]) * t;
  }

  // Tangent heading at arc length s.
  double heading_at(double s) const {
    std::size_t i = segment_index(std::min(std::max(s, 0.0), length()));
    const Vec2 d = pts_[i + 1] - pts_[i];
    return std::atan2(d.y, d.x);
  }

  struct Projection {
    double arc = 0.0;      // arc length of the closest point
    double lateral = 0.0;  // signed offset, positive to the left of travel
    double dist = 0.0;     // unsigned distance
  };

  // Closest-point projection of p onto the curve.
  Projection project(const Vec2& p) const {
    Projection best;
    best.dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
      const Vec2 a = pts_[i], b = pts_[i + 1];
      const Vec2 ab = b - a;
      const double len2 = ab.dot(ab);
      double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
      t = std::min(1.0, std::max(0.0, t));
      const Vec2 q = a + ab * t;
      const double d = distance(p, q);
      if (d < best.dist) {
        best.dist = d;
        best.arc = cum_[i] + t * std::sqrt(len2);
        const double cross = ab.x * (p.y - a.y) - ab.y * (p.x - a.x);
        best.lateral = (cross >= 0.0 ? 1.0 : -1.0) * d;
      }
    }
    return best;
  }

 private:
  std::size_t segment_index(double s) const {
    std::size_t lo = 0, hi = cum_.size() - 1;
    while (hi - lo > 1) {
      std::size_t mid = (lo + hi) / 2;
      (cum_[mid] <= s ? lo : hi) = mid;
    }
    return lo;
  }

  std::vector<Vec2> pts_;
  std::vector<double> cum_;
};

}  // namespace hsim
