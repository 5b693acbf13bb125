#pragma once

// Buffer volume evolution D(t+1) = theta * D(t) + Delta(t) and the
// degree-of-staleness (DoS) metric computed over a buffer trajectory.

#include <cstddef>
#include <span>
#include <vector>

#include "dufl/common.hpp"

namespace dufl {

/// A buffer rolled forward from its initial volume.
///
/// `increments` holds Delta(0..n-1) and `volumes` holds D(0..n), so
/// `volumes.size() == increments.size() + 1` always.
struct BufferTrajectory {
  double initial_volume = 0.0;
  double conservation_rate = 1.0;
  std::vector<double> increments;
  std::vector<double> volumes;

  std::size_t horizon() const noexcept { return volumes.size(); }
};

/// DoS values S(0..n), one per entry of BufferTrajectory::volumes.
struct StalenessTrajectory {
  std::vector<double> values;
};

inline BufferTrajectory roll_buffer(double initial_volume, double theta,
                                    std::span<const double> increments) {
  detail::require(detail::is_unit_interval(theta), "conservation rate must lie in [0, 1]");
  detail::require(detail::is_nonnegative(initial_volume), "initial volume must be nonnegative");
  for (double d : increments) {
    detail::require(detail::is_nonnegative(d), "increments must be nonnegative");
  }

  BufferTrajectory out;
  out.initial_volume = initial_volume;
  out.conservation_rate = theta;
  out.increments.assign(increments.begin(), increments.end());
  out.volumes.reserve(increments.size() + 1);
  out.volumes.push_back(initial_volume);
  for (double d : increments) out.volumes.push_back(theta * out.volumes.back() + d);
  return out;
}

/// Definition-style recursion: conserved data ages by one round, fresh
/// data enters with DoS 1. An empty buffer (D <= kVolumeEpsilon) has DoS 1.
inline StalenessTrajectory staleness_recursive(const BufferTrajectory& buffer) {
  const auto& vol = buffer.volumes;
  const double theta = buffer.conservation_rate;
  StalenessTrajectory out;
  out.values.resize(vol.size(), 1.0);
  for (std::size_t t = 1; t < vol.size(); ++t) {
    if (vol[t] <= kVolumeEpsilon) continue;
    out.values[t] = theta * vol[t - 1] / vol[t] * (out.values[t - 1] + 1.0) +
                    buffer.increments[t - 1] / vol[t];
  }
  return out;
}

/// Unrolled form S(t) = sum_{tau<=t} theta^(t-tau) D(tau) / D(t).
inline StalenessTrajectory staleness_closed_form(const BufferTrajectory& buffer) {
  const auto& vol = buffer.volumes;
  const double theta = buffer.conservation_rate;
  StalenessTrajectory out;
  out.values.resize(vol.size(), 1.0);
  for (std::size_t t = 0; t < vol.size(); ++t) {
    if (vol[t] <= kVolumeEpsilon) continue;
    // Horner over tau = 0..t; theta^0 == 1 even when theta == 0.
    double acc = 0.0;
    for (std::size_t tau = 0; tau <= t; ++tau) acc = acc * theta + vol[tau];
    out.values[t] = acc / vol[t];
  }
  return out;
}

}  // namespace dufl
