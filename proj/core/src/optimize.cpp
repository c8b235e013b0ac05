#include "mergecast/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mergecast/error.hpp"
#include "mergecast/rng.hpp"

namespace mergecast::opt {

namespace {

void project(std::vector<double>& x, const Box& box) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], box.lo[i], box.hi[i]);
}

double safe_eval(const Objective& f, const std::vector<double>& x) {
  const double v = f(x);
  return std::isfinite(v) ? v : std::numeric_limits<double>::max();
}

}  // namespace

SimplexResult nelder_mead(const Objective& f, std::span<const double> x0, const Box& box,
                          const SimplexOptions& options) {
  const std::size_t n = x0.size();
  if (n == 0 || box.lo.size() != n || box.hi.size() != n) throw ParameterError("simplex dimension mismatch");

  std::vector<double> width(n);
  for (std::size_t i = 0; i < n; ++i) width[i] = std::max(box.hi[i] - box.lo[i], 1e-12);

  std::vector<std::vector<double>> pts(n + 1, std::vector<double>(x0.begin(), x0.end()));
  project(pts[0], box);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = pts[i + 1];
    p = pts[0];
    const double step = options.initial_step * width[i];
    // Step inward when the start sits on the upper bound.
    p[i] = (p[i] + step <= box.hi[i]) ? p[i] + step : p[i] - step;
    project(p, box);
  }

  SimplexResult res;
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fv[i] = safe_eval(f, pts[i]);
  res.evals = static_cast<int>(n + 1);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;

  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t d = 0; d < n; ++d) {
        diameter = std::max(diameter, std::abs(pts[i][d] - pts[best][d]) / width[d]);
      }
    }
    if (fv[worst] - fv[best] <= options.f_tol && diameter <= options.x_tol) {
      res.converged = true;
      break;
    }
    if (res.evals >= options.max_evals) break;

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t d = 0; d < n; ++d) centroid[d] += pts[i][d];
    }
    for (auto& c : centroid) c /= static_cast<double>(n);

    auto along = [&](double coef, std::vector<double>& out) {
      for (std::size_t d = 0; d < n; ++d) out[d] = centroid[d] + coef * (pts[worst][d] - centroid[d]);
      project(out, box);
      ++res.evals;
      return safe_eval(f, out);
    };

    const double fr = along(-kReflect, trial);
    if (fr < fv[best]) {
      const double fe = along(-kExpand, trial2);
      if (fe < fr) {
        pts[worst] = trial2;
        fv[worst] = fe;
      } else {
        pts[worst] = trial;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      pts[worst] = trial;
      fv[worst] = fr;
      continue;
    }
    // Outside contraction when the reflection beat the worst point, inside otherwise.
    const bool outside = fr < fv[worst];
    const double fc = along(outside ? -kContract : kContract, trial2);
    if (fc < (outside ? fr : fv[worst])) {
      pts[worst] = trial2;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t d = 0; d < n; ++d) pts[i][d] = pts[best][d] + kShrink * (pts[i][d] - pts[best][d]);
      project(pts[i], box);
      fv[i] = safe_eval(f, pts[i]);
      ++res.evals;
    }
  }

  const auto best_it = std::min_element(fv.begin(), fv.end());
  const auto b = static_cast<std::size_t>(best_it - fv.begin());
  res.x = pts[b];
  res.f = fv[b];
  return res;
}

std::vector<std::vector<double>> latin_hypercube(const Box& box, std::size_t n, std::uint64_t seed) {
  const std::size_t dim = box.lo.size();
  Rng rng(seed);
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  std::vector<std::size_t> strata(n);
  for (std::size_t d = 0; d < dim; ++d) {
    std::iota(strata.begin(), strata.end(), 0);
    rng.shuffle(strata);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(n);
      pts[i][d] = box.lo[d] + u * (box.hi[d] - box.lo[d]);
    }
  }
  return pts;
}

}  // namespace mergecast::opt
