#include "smtl/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace smtl::ag {

GradCheckResult grad_check(const std::function<double(const Tensor&)>& f,
                           const Tensor& analytic, const Tensor& params,
                           double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  if (analytic.numel() != params.numel())
    throw std::invalid_argument("grad_check: gradient size " +
                                std::to_string(analytic.numel()) +
                                " vs parameter size " +
                                std::to_string(params.numel()));

  GradCheckResult res;
  Tensor probe = params;
  probe.node = -1;
  for (int64_t i = 0; i < params.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      res.finite = false;
      res.worst_index = i;
      res.note = "non-finite objective at coordinate " + std::to_string(i);
      return res;
    }
    const double central = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double rel =
        std::fabs(a - central) / std::max(1e-8, std::fabs(a) + std::fabs(central));
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
    }
  }
  return res;
}

}  // namespace smtl::ag
