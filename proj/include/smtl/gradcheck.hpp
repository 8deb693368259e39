#pragma once

#include <functional>
#include <string>

#include "smtl/tensor.hpp"

namespace smtl::ag {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  bool finite = true;        // false if f was non-finite at a probe point
  std::string note;

  bool ok(double tol) const { return finite && max_rel_err < tol; }
};

// Compares an analytic gradient against central finite differences with
// step h. Per coordinate the relative error is
//   |analytic - central| / max(1e-8, |analytic| + |central|).
// `f` evaluates the scalar objective at a parameter vector; `analytic` is
// the gradient claimed at `params`.
GradCheckResult grad_check(const std::function<double(const Tensor&)>& f,
                           const Tensor& analytic, const Tensor& params,
                           double h);

}  // namespace smtl::ag
