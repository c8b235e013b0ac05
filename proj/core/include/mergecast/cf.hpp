#pragma once

// Car-following acceleration laws (IDM, Gipps, GHR) and their bounded
// calibration on short acceleration windows.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "mergecast/types.hpp"

namespace mergecast::cf {

/// Gaps below this are treated as contact and answered with saturated braking.
inline constexpr double kGapFloor = 0.1;
/// Braking used on contact by the families that have no deceleration parameter.
inline constexpr double kDefaultMaxDecel = 5.0;

enum class Family : std::uint8_t { kIdm, kGipps, kGhr };

std::string_view family_name(Family f) noexcept;
std::optional<Family> family_from_name(std::string_view name) noexcept;

struct IdmParams {
  double s0 = 5.0;      ///< minimum spacing, m
  double h_d = 1.0;     ///< desired time headway, s
  double a_max = 1.5;   ///< maximum acceleration, m/s^2
  double b_max = 2.0;   ///< maximum deceleration magnitude, m/s^2
  double v_d = 30.0;    ///< desired speed, m/s
  double delta = 4.0;   ///< free-road exponent
};

struct GippsParams {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

struct GhrParams {
  double alpha = 1.0;
  double beta = 0.0;
  double gamma = 1.0;
};

using ModelParams = std::variant<IdmParams, GippsParams, GhrParams>;

Family family_of(const ModelParams& p) noexcept;

/// Result of one acceleration evaluation.
struct Accel {
  double value = 0.0;
  bool saturated = false;  ///< gap fell below kGapFloor
};

/// Sign-preserving power: sign(d) * |d|^e, with spow(0, e) = 0.
double spow(double d, double e) noexcept;

Accel idm_accel(const VehicleState& self, const VehicleState& leader, const IdmParams& p) noexcept;
Accel gipps_accel(const VehicleState& self, const VehicleState& leader, const GippsParams& p) noexcept;
Accel ghr_accel(const VehicleState& self, const VehicleState& leader, const GhrParams& p) noexcept;
Accel accel(const VehicleState& self, const VehicleState& leader, const ModelParams& p) noexcept;

/// Box constraints for the calibration of one family.
struct Bounds {
  std::vector<double> lo;
  std::vector<double> hi;
  std::size_t size() const noexcept { return lo.size(); }
  bool contains(std::span<const double> x) const noexcept;
};

Bounds default_bounds(Family f);
std::size_t parameter_count(Family f) noexcept;
std::vector<double> to_vector(const ModelParams& p);
ModelParams from_vector(Family f, std::span<const double> x);

/// Fitted parameters plus diagnostics.
struct CfParams {
  ModelParams params = IdmParams{};
  double mse = 0.0;  ///< m^2/s^4
  bool converged = false;
  int iterations = 0;

  Family family() const noexcept { return family_of(params); }
};

/// One step of a calibration window.
struct FitSample {
  VehicleState self;
  VehicleState leader;
  double observed_accel = 0.0;
};

inline constexpr std::size_t kFitWindowSteps = 20;

struct FitOptions {
  std::size_t starts = 16;         ///< Latin-hypercube starting points
  std::uint64_t seed = 0x5eed;
  int max_evals_per_start = 4000;
  double f_tol = 1e-16;            ///< simplex value spread that stops a run
  double x_tol = 1e-10;            ///< simplex size (in unit box scale) that stops a run
  std::vector<std::size_t> held_out;  ///< window indices excluded from the objective
};

/// Mean squared acceleration residual over the window (minus held-out steps).
double window_mse(const ModelParams& p, std::span<const FitSample> window,
                  std::span<const std::size_t> held_out = {});

/// Bounded multi-start Nelder-Mead fit. The window must hold exactly
/// kFitWindowSteps samples.
CfParams fit_cf(Family family, std::span<const FitSample> window, const Bounds& bounds,
                const FitOptions& options = {});
inline CfParams fit_cf(Family family, std::span<const FitSample> window, const FitOptions& options = {}) {
  return fit_cf(family, window, default_bounds(family), options);
}

}  // namespace mergecast::cf
