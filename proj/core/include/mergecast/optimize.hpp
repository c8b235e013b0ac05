#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mergecast::opt {

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;
};

struct SimplexOptions {
  int max_evals = 4000;
  double f_tol = 1e-16;
  double x_tol = 1e-10;   ///< relative to the box width
  double initial_step = 0.1;  ///< fraction of the box width
};

struct SimplexResult {
  std::vector<double> x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

using Objective = std::function<double(std::span<const double>)>;

/// Nelder-Mead minimization with every trial point projected onto the box.
SimplexResult nelder_mead(const Objective& f, std::span<const double> x0, const Box& box,
                          const SimplexOptions& options = {});

/// n points of a Latin hypercube in the box, one stratum per point and axis.
std::vector<std::vector<double>> latin_hypercube(const Box& box, std::size_t n, std::uint64_t seed);

}  // namespace mergecast::opt
