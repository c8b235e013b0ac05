#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace mergecast {

/// Sampling interval of every processed track, seconds.
inline constexpr double kTrackDt = 0.2;

/// Kinematic record of one vehicle at one time step.
/// x/v/a are longitudinal, y/u/e lateral.
struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  double u = 0.0;
  double a = 0.0;
  double e = 0.0;

  bool finite() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(v) &&
           std::isfinite(u) && std::isfinite(a) && std::isfinite(e);
  }
  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

/// Uniformly sampled trajectory of one vehicle.
struct Track {
  int vehicle_id = 0;
  double t0 = 0.0;  ///< time of states[0]
  double dt = kTrackDt;
  std::vector<VehicleState> states;
  std::vector<int> lane_ids;  ///< parallel to states

  std::size_t size() const noexcept { return states.size(); }
  bool empty() const noexcept { return states.empty(); }
  double time(std::size_t k) const noexcept { return t0 + static_cast<double>(k) * dt; }
  double end_time() const noexcept { return empty() ? t0 : time(size() - 1); }

  /// Index of the sample at time t, or -1 when t is off the track's span.
  /// Times within a quarter step of a grid point snap to it.
  long index_at(double t) const noexcept {
    if (empty()) return -1;
    const double r = (t - t0) / dt;
    const double k = std::round(r);
    if (std::abs(r - k) > 0.25 || k < 0.0 || k > static_cast<double>(size() - 1)) return -1;
    return static_cast<long>(k);
  }
};

}  // namespace mergecast
