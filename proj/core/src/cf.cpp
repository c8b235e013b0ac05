#include "mergecast/cf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mergecast/error.hpp"
#include "mergecast/optimize.hpp"
#include "mergecast/rng.hpp"

namespace mergecast::cf {

std::string_view family_name(Family f) noexcept {
  switch (f) {
    case Family::kIdm: return "idm";
    case Family::kGipps: return "gipps";
    case Family::kGhr: return "ghr";
  }
  return "?";
}

std::optional<Family> family_from_name(std::string_view name) noexcept {
  for (auto f : {Family::kIdm, Family::kGipps, Family::kGhr}) {
    if (family_name(f) == name) return f;
  }
  return std::nullopt;
}

Family family_of(const ModelParams& p) noexcept {
  switch (p.index()) {
    case 0: return Family::kIdm;
    case 1: return Family::kGipps;
    default: return Family::kGhr;
  }
}

double spow(double d, double e) noexcept {
  if (d == 0.0) return 0.0;
  const double m = std::pow(std::abs(d), e);
  return d > 0.0 ? m : -m;
}

Accel idm_accel(const VehicleState& self, const VehicleState& leader, const IdmParams& p) noexcept {
  const double gap = leader.x - self.x;
  if (!(gap >= kGapFloor)) return {-p.b_max, true};
  const double v = self.v;
  const double s_d = p.s0 + p.h_d * v + v * (v - leader.v) / (2.0 * std::sqrt(p.a_max * p.b_max));
  const double ratio = s_d / gap;
  return {p.a_max * (1.0 - spow(v / p.v_d, p.delta) - ratio * ratio), false};
}

Accel gipps_accel(const VehicleState& self, const VehicleState& leader, const GippsParams& p) noexcept {
  const double gap = std::abs(leader.x - self.x);
  if (!(gap >= kGapFloor)) return {-kDefaultMaxDecel, true};
  return {p.alpha * spow(leader.v - self.v, p.beta) / std::pow(gap, p.gamma), false};
}

Accel ghr_accel(const VehicleState& self, const VehicleState& leader, const GhrParams& p) noexcept {
  const double gap = leader.x - self.x;
  if (!(gap >= kGapFloor)) return {-kDefaultMaxDecel, true};
  return {p.alpha * spow(self.v, p.beta) * (leader.v - self.v) / std::pow(gap, p.gamma), false};
}

Accel accel(const VehicleState& self, const VehicleState& leader, const ModelParams& p) noexcept {
  return std::visit(
      [&](const auto& q) -> Accel {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, IdmParams>) return idm_accel(self, leader, q);
        else if constexpr (std::is_same_v<T, GippsParams>) return gipps_accel(self, leader, q);
        else return ghr_accel(self, leader, q);
      },
      p);
}

bool Bounds::contains(std::span<const double> x) const noexcept {
  if (x.size() != lo.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
  }
  return true;
}

Bounds default_bounds(Family f) {
  switch (f) {
    case Family::kIdm: return {{5, 0.5, 0.5, 0.5, 5, 0}, {30, 6, 5, 5, 35, 10}};
    case Family::kGipps:
    case Family::kGhr: return {{-10, -5, -5}, {10, 5, 5}};
  }
  throw ParameterError("unknown car-following family");
}

std::size_t parameter_count(Family f) noexcept { return f == Family::kIdm ? 6 : 3; }

std::vector<double> to_vector(const ModelParams& p) {
  return std::visit(
      [](const auto& q) -> std::vector<double> {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, IdmParams>) return {q.s0, q.h_d, q.a_max, q.b_max, q.v_d, q.delta};
        else return {q.alpha, q.beta, q.gamma};
      },
      p);
}

ModelParams from_vector(Family f, std::span<const double> x) {
  if (x.size() != parameter_count(f)) throw ParameterError("parameter vector has the wrong length");
  switch (f) {
    case Family::kIdm: return IdmParams{x[0], x[1], x[2], x[3], x[4], x[5]};
    case Family::kGipps: return GippsParams{x[0], x[1], x[2]};
    case Family::kGhr: return GhrParams{x[0], x[1], x[2]};
  }
  throw ParameterError("unknown car-following family");
}

double window_mse(const ModelParams& p, std::span<const FitSample> window, std::span<const std::size_t> held_out) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < window.size(); ++k) {
    if (std::find(held_out.begin(), held_out.end(), k) != held_out.end()) continue;
    const auto& s = window[k];
    const double r = accel(s.self, s.leader, p).value - s.observed_accel;
    sum += r * r;
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

CfParams fit_cf(Family family, std::span<const FitSample> window, const Bounds& bounds, const FitOptions& options) {
  if (window.size() != kFitWindowSteps) {
    throw ParameterError("calibration window must hold exactly " + std::to_string(kFitWindowSteps) + " samples");
  }
  if (bounds.size() != parameter_count(family)) throw ParameterError("bounds do not match the model family");
  for (auto k : options.held_out) {
    if (k >= window.size()) throw ParameterError("held-out index outside the window");
  }
  if (options.held_out.size() >= window.size()) throw ParameterError("every sample is held out");

  const opt::Box box{bounds.lo, bounds.hi};
  const opt::Objective objective = [&](std::span<const double> x) {
    return window_mse(from_vector(family, x), window, options.held_out);
  };
  opt::SimplexOptions so;
  so.max_evals = options.max_evals_per_start;
  so.f_tol = options.f_tol;
  so.x_tol = options.x_tol;

  const auto starts = opt::latin_hypercube(box, std::max<std::size_t>(options.starts, 1),
                                           derive_seed(options.seed, "cf-starts", static_cast<int>(family)));
  opt::SimplexResult best;
  best.f = std::numeric_limits<double>::infinity();
  int evals = 0;
  for (const auto& x0 : starts) {
    auto r = opt::nelder_mead(objective, x0, box, so);
    evals += r.evals;
    if (r.f < best.f) best = std::move(r);
  }

  // Restart from the best vertex until a restart stops improving it.
  so.initial_step = 0.05;
  bool converged = best.converged;
  for (int round = 0; round < 4; ++round) {
    auto r = opt::nelder_mead(objective, best.x, box, so);
    evals += r.evals;
    converged = r.converged;
    if (!(r.f < best.f)) break;
    best = std::move(r);
  }

  CfParams out;
  out.params = from_vector(family, best.x);
  out.mse = window_mse(out.params, window, options.held_out);
  out.converged = converged;
  out.iterations = evals;
  return out;
}

}  // namespace mergecast::cf
