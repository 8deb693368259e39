#include "smtl/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "smtl/errors.hpp"

namespace smtl::train {

void adam_step(model::ParamSet& params, const std::vector<ag::Tensor>& grads,
               AdamState& state, double lr, double l2) {
  const size_t n = params.entries.size();
  if (grads.size() != n)
    throw std::invalid_argument("adam_step: got " +
                                std::to_string(grads.size()) +
                                " gradients for " + std::to_string(n) +
                                " parameters");
  if (state.m.empty()) {
    state.m.reserve(n);
    state.v.reserve(n);
    for (const auto& [name, t] : params.entries) {
      state.m.emplace_back(t.shape);
      state.v.emplace_back(t.shape);
    }
  }

  state.step += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double eps = state.config.eps;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (size_t i = 0; i < n; ++i) {
    auto& [name, p] = params.entries[i];
    const ag::Tensor& grad = grads[i];
    if (grad.numel() != p.numel())
      throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                  name);
    ag::Tensor& m = state.m[i];
    ag::Tensor& v = state.v[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      double gj = grad[j];
      if (!std::isfinite(gj))
        throw NumericError("non-finite gradient for parameter " + name +
                           "[" + std::to_string(j) + "]");
      gj += l2 * p[j];
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
    }
  }
}

}  // namespace smtl::train
