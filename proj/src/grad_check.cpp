#include "covdistill/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace covdistill {

GradCheckResult grad_check(const std::function<double(bool)>& loss, std::span<Param* const> params,
                           Rng& rng, const GradCheckOptions& opts) {
  loss(true);
  // Snapshot: later loss evaluations must not disturb the analytic grads we compare against.
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Param* p : params) {
    for (double g : p->grad.flat()) {
      if (!std::isfinite(g)) throw Error(ErrorKind::Numeric, "non-finite gradient in " + p->name);
    }
    analytic.push_back(p->grad);
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    const std::size_t n = p.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > opts.coords_per_param) {
      // Partial Fisher-Yates: first k entries are a uniform sample.
      for (std::size_t i = 0; i < opts.coords_per_param; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(n - 1)));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opts.coords_per_param);
    }
    for (std::size_t c : coords) {
      double& v = p.value.data()[c];
      const double orig = v;
      v = orig + opts.step;
      const double up = loss(false);
      v = orig - opts.step;
      const double down = loss(false);
      v = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[pi].data()[c];
      if (!std::isfinite(numeric)) throw Error(ErrorKind::Numeric, "non-finite loss probing " + p.name);
      const double err = std::abs(a - numeric) / std::max(opts.denominator_floor, std::abs(a) + std::abs(numeric));
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = p.name;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace covdistill
