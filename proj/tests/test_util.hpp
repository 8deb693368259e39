#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "smtl/rng.hpp"
#include "smtl/tensor.hpp"

namespace testutil {

inline smtl::ag::Tensor random_tensor(smtl::ag::Shape shape,
                                      smtl::rng::Stream& s, double lo = -1.0,
                                      double hi = 1.0) {
  smtl::ag::Tensor t(std::move(shape));
  for (double& v : t.data) v = s.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero, for kink-free relu probing.
inline smtl::ag::Tensor random_tensor_nonzero(smtl::ag::Shape shape,
                                              smtl::rng::Stream& s,
                                              double margin = 0.05) {
  smtl::ag::Tensor t(std::move(shape));
  for (double& v : t.data) {
    const double mag = s.uniform(margin, 1.0);
    v = s.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

using Builder = std::function<smtl::ag::Tensor(
    smtl::ag::Graph&, const std::vector<smtl::ag::Tensor>&)>;

// Max relative error between the autograd gradient and central finite
// differences, over every coordinate of every input.
inline double fd_max_rel_err(const Builder& build,
                             std::vector<smtl::ag::Tensor> inputs,
                             double h = 1e-5) {
  namespace ag = smtl::ag;
  ag::Graph g;
  std::vector<ag::Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(g.leaf(t));
  const ag::Tensor out = build(g, leaves);
  const auto grads = g.backward(out);

  auto eval = [&](const std::vector<ag::Tensor>& probe) {
    ag::Graph g2;
    std::vector<ag::Tensor> lv;
    lv.reserve(probe.size());
    for (const auto& t : probe) lv.push_back(g2.leaf(t));
    return build(g2, lv)[0];
  };

  double max_rel = 0.0;
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    const auto it = grads.find(leaves[ii].node);
    for (int64_t j = 0; j < inputs[ii].numel(); ++j) {
      auto probe = inputs;
      probe[ii][j] += h;
      const double fp = eval(probe);
      probe[ii][j] -= 2.0 * h;
      const double fm = eval(probe);
      const double central = (fp - fm) / (2.0 * h);
      const double a = it != grads.end() ? it->second[j] : 0.0;
      const double rel = std::fabs(a - central) /
                         std::max(1e-8, std::fabs(a) + std::fabs(central));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace testutil
