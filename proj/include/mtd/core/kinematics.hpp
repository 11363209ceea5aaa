#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/types.hpp"

namespace mtd {

/// First-order backward difference: v_i = (p_i - p_{i-1}) / (t_i - t_{i-1}),
/// stamped at t_i, for i = 1..N-1.
inline VelocityTrack differentiate_velocity(const KinematicStream& kin) {
  require(kin.timestamps_s.size() == kin.positions_m.size(), ErrorKind::ShapeError,
          "kinematic timestamps and positions differ in length");
  require(kin.size() >= 2, ErrorKind::InsufficientData, "need at least 2 kinematic samples");
  VelocityTrack out;
  out.timestamps_s.reserve(kin.size() - 1);
  out.velocities_mps.reserve(kin.size() - 1);
  for (std::size_t i = 1; i < kin.size(); ++i) {
    const double dt = kin.timestamps_s[i] - kin.timestamps_s[i - 1];
    require(dt > 0.0, ErrorKind::InvalidTimestamps, "timestamps not strictly increasing");
    Vec3 v{};
    for (std::size_t a = 0; a < 3; ++a) v[a] = (kin.positions_m[i][a] - kin.positions_m[i - 1][a]) / dt;
    out.timestamps_s.push_back(kin.timestamps_s[i]);
    out.velocities_mps.push_back(v);
  }
  return out;
}

/// Linear interpolation of the track at time t; clamps outside the covered span.
inline Vec3 sample_at(const VelocityTrack& track, double t) {
  require(!track.empty(), ErrorKind::InsufficientData, "empty velocity track");
  const auto& ts = track.timestamps_s;
  if (t <= ts.front()) return track.velocities_mps.front();
  if (t >= ts.back()) return track.velocities_mps.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - ts[lo]) / (ts[hi] - ts[lo]);
  Vec3 v{};
  for (std::size_t a = 0; a < 3; ++a)
    v[a] = (1.0 - w) * track.velocities_mps[lo][a] + w * track.velocities_mps[hi][a];
  return v;
}

/// Uniform grid t0 + k*step for k = 0..count-1 (explicit anchor variant).
inline VelocityTrack resample_to_grid(const VelocityTrack& track, double step_s, double t0, std::size_t count) {
  require(step_s > 0.0, ErrorKind::DataError, "resample step must be positive");
  require(!track.empty(), ErrorKind::InsufficientData, "empty velocity track");
  VelocityTrack out;
  out.timestamps_s.reserve(count);
  out.velocities_mps.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = t0 + static_cast<double>(k) * step_s;
    out.timestamps_s.push_back(t);
    out.velocities_mps.push_back(sample_at(track, t));
  }
  return out;
}

/// Uniform grid starting at the first timestamp and covering the track span.
inline VelocityTrack resample_to_grid(const VelocityTrack& track, double step_s) {
  require(step_s > 0.0, ErrorKind::DataError, "resample step must be positive");
  require(!track.empty(), ErrorKind::InsufficientData, "empty velocity track");
  const double span = track.timestamps_s.back() - track.timestamps_s.front();
  // Tolerate representation error so an exact multiple of step keeps its last point.
  const auto count = static_cast<std::size_t>(std::floor(span / step_s + 1e-9)) + 1;
  return resample_to_grid(track, step_s, track.timestamps_s.front(), count);
}

}  // namespace mtd
