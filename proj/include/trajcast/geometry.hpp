// Copyright 2026 trajcast contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "trajcast/common.hpp"

namespace trajcast {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double theta) {
  if (!std::isfinite(theta)) throw NumericError("wrap_angle: non-finite input");
  double r = std::fmod(theta + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double norm2(double x, double y) { return std::sqrt(x * x + y * y); }

/// Radius gate with micrometer quantization: scenes routinely place elements
/// at mathematically exact radius distances, where raw floating-point
/// comparison would flip between rigidly transformed copies of a scene.
inline bool within_radius(double dx, double dy, double radius) {
  return std::llround(norm2(dx, dy) * 1e6) <= std::llround(radius * 1e6);
}

/// Angles that feed Fourier features need a stable representative at the wrap
/// boundary: collinear scene elements sit mathematically at +-pi, where
/// rounding noise flips the wrapped sign and the (non-periodic-in-angle)
/// feature embedding would jump. Snaps the lower boundary neighborhood to +pi.
inline double snap_angle_boundary(double a) {
  return a <= -kPi + 1e-9 ? kPi : a;
}

/// SE(2) pose plus a time index: the local coordinate system every scene
/// element carries in the query-centric formulation.
struct ReferenceFrame {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // wrapped to (-pi, pi]
  int t = 0;

  Vec2 to_global(double lx, double ly) const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {x + c * lx - s * ly, y + s * lx + c * ly};
  }
  Vec2 to_local(double gx, double gy) const {
    const double c = std::cos(heading), s = std::sin(heading);
    const double dx = gx - x, dy = gy - y;
    return {c * dx + s * dy, -s * dx + c * dy};
  }
};

/// Relative pose descriptor between two frames: distance, bearing of the
/// target in the source frame, relative orientation, and time-index delta.
struct RelDescriptor {
  double distance = 0.0;      // >= 0
  double direction = 0.0;     // (-pi, pi]
  double rel_orientation = 0.0;  // (-pi, pi]
  double dt = 0.0;            // signed time-index difference

  std::array<double, 4> as_array() const {
    return {distance, direction, rel_orientation, dt};
  }
};

inline RelDescriptor relative_descriptor(const ReferenceFrame& src,
                                         const ReferenceFrame& dst) {
  RelDescriptor d;
  const double dx = dst.x - src.x, dy = dst.y - src.y;
  d.distance = norm2(dx, dy);
  // A zero-length offset has no bearing; define it as 0. Sub-nanometer
  // offsets count as zero, otherwise atan2 of rounding noise would produce an
  // arbitrary bearing for elements sitting exactly on top of each other.
  d.direction = d.distance > 1e-9
                    ? snap_angle_boundary(wrap_angle(std::atan2(dy, dx) - src.heading))
                    : 0.0;
  d.rel_orientation = snap_angle_boundary(wrap_angle(dst.heading - src.heading));
  d.dt = static_cast<double>(dst.t - src.t);
  return d;
}

struct PosePoint {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

/// Rigid SE(2) map of global poses into `frame` coordinates.
inline std::vector<PosePoint> transform_to_frame(std::span<const PosePoint> points,
                                                 const ReferenceFrame& frame) {
  std::vector<PosePoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec2 l = frame.to_local(p.x, p.y);
    out.push_back({l.x, l.y, wrap_angle(p.heading - frame.heading)});
  }
  return out;
}

/// Inverse of transform_to_frame.
inline std::vector<PosePoint> transform_from_frame(std::span<const PosePoint> points,
                                                   const ReferenceFrame& frame) {
  std::vector<PosePoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec2 g = frame.to_global(p.x, p.y);
    out.push_back({g.x, g.y, wrap_angle(p.heading + frame.heading)});
  }
  return out;
}

/// Fixed log-spaced frequency bands shared by every Fourier embedding in the
/// model. Non-learned so that feature vectors are reproducible in tests.
struct FourierBands {
  std::vector<double> freqs;
  bool append_raw = true;

  static FourierBands log_spaced(int count = 64, double f_min = 1.0 / 64.0,
                                 double f_max = 8.0, bool raw = true) {
    FourierBands b;
    b.append_raw = raw;
    b.freqs.resize(static_cast<std::size_t>(count));
    if (count == 1) {
      b.freqs[0] = f_min;
    } else {
      const double lo = std::log(f_min), hi = std::log(f_max);
      for (int j = 0; j < count; ++j)
        b.freqs[static_cast<std::size_t>(j)] =
            std::exp(lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(count - 1));
    }
    return b;
  }

  std::size_t feature_dim(std::size_t input_dim) const {
    return 2 * input_dim * freqs.size() + (append_raw ? input_dim : 0);
  }

  /// Component-major layout: for each x_i, for each band f_j, sin then cos;
  /// raw inputs appended at the end when enabled.
  void compute(std::span<const double> x, std::span<double> out) const {
    std::size_t k = 0;
    for (double xi : x) {
      for (double f : freqs) {
        const double a = 2.0 * kPi * f * xi;
        out[k++] = std::sin(a);
        out[k++] = std::cos(a);
      }
    }
    if (append_raw)
      for (double xi : x) out[k++] = xi;
  }

  std::vector<double> operator()(std::span<const double> x) const {
    std::vector<double> out(feature_dim(x.size()));
    compute(x, out);
    return out;
  }
};

struct ClosestPointResult {
  Vec2 point;
  double tangent_heading = 0.0;
  double distance = 0.0;
};

/// Closest point on a segment chain to `(px, py)`, with the tangent of the
/// containing segment. A later segment must beat the incumbent by more than
/// 1e-9 m, so ties at shared vertices resolve to the earlier segment
/// regardless of rounding noise.
inline ClosestPointResult closest_point_on_polyline(std::span<const Vec2> pts,
                                                    double px, double py) {
  ClosestPointResult best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double ax = pts[i].x, ay = pts[i].y;
    const double bx = pts[i + 1].x, by = pts[i + 1].y;
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double u = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    const double cx = ax + u * vx, cy = ay + u * vy;
    const double d = norm2(px - cx, py - cy);
    if (d < best.distance - 1e-9) {
      best.distance = d;
      best.point = {cx, cy};
      best.tangent_heading = std::atan2(vy, vx);
    }
  }
  return best;
}

/// Descriptor from an agent frame to its closest point on a polyline; the
/// target orientation is the tangent of the containing segment.
inline RelDescriptor closest_point_descriptor(const ReferenceFrame& agent_frame,
                                              std::span<const Vec2> polyline_pts) {
  const ClosestPointResult cp =
      closest_point_on_polyline(polyline_pts, agent_frame.x, agent_frame.y);
  ReferenceFrame target{cp.point.x, cp.point.y, wrap_angle(cp.tangent_heading),
                        agent_frame.t};
  return relative_descriptor(agent_frame, target);
}

}  // namespace trajcast
