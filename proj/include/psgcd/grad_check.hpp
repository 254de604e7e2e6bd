#pragma once

#include <functional>
#include <string>
#include <vector>

#include "psgcd/matrix.hpp"

namespace psgcd {

// Scalar objective over a parameter set. When grads is non-null the function
// must also emit one analytic gradient per parameter (same shapes, same
// order). The function must be deterministic.
using GradCheckFn = std::function<double(const std::vector<Matrix>& params,
                                         std::vector<Matrix>* grads)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int worst_row = -1;
  int worst_col = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = true;

  std::string summary() const;
};

// Central finite differences against the analytic gradients, entry by entry.
// rel_err = |a - n| / max(floor, |a|, |n|). step must lie in [1e-7, 1e-3].
GradCheckReport grad_check(const GradCheckFn& loss_fn, const std::vector<Matrix>& params,
                           const std::vector<std::string>& names, double step, double tolerance,
                           double denom_floor = 1e-6);

}  // namespace psgcd
