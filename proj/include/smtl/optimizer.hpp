#pragma once

#include <cstdint>
#include <vector>

#include "smtl/model.hpp"
#include "smtl/tensor.hpp"

namespace smtl::train {

// Bias-corrected Adam with classic L2 decay: lambda * param is added to
// the gradient before the moment update.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<ag::Tensor> m, v;  // aligned with the parameter entries
  int64_t step = 0;
  AdamConfig config;
};

// `grads` must be aligned with params.entries (one tensor per entry).
// Non-finite gradients abort with the parameter path.
void adam_step(model::ParamSet& params, const std::vector<ag::Tensor>& grads,
               AdamState& state, double lr, double l2 = 0.0);

}  // namespace smtl::train
