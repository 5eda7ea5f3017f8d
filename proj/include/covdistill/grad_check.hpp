#pragma once

#include <functional>
#include <span>

#include "covdistill/matrix.hpp"
#include "covdistill/rng.hpp"

namespace covdistill {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t coords_per_param = 20;  // all coordinates when the param is smaller
  /// Denominator floor. A central difference of a loss near 1 carries about
  /// 1e-11 of rounding error at step 1e-5; gradients that vanish exactly
  /// (biases cancelled by softmax or batch norm) would otherwise score ~1e-3.
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Central-difference check of analytic gradients.
///
/// `loss` evaluates the scalar at the current parameter values. When its
/// argument is true it must also zero and fill every Param::grad. The
/// relative error per coordinate is |a - n| / max(floor, |a| + |n|).
GradCheckResult grad_check(const std::function<double(bool)>& loss, std::span<Param* const> params,
                           Rng& rng, const GradCheckOptions& opts = {});

}  // namespace covdistill
