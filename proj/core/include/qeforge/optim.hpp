#pragma once

#include <cstdint>
#include <vector>

#include "qeforge/tensor.hpp"

namespace qeforge::nn {

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for one parameter list. Moments are allocated lazily on the
/// first step to match the list's shapes.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update of `params` using `grads` (same order and
/// shapes). Throws NumericError naming the parameter if any gradient is
/// non-finite; parameters are untouched in that case.
void adam_step(AdamState& state, const ParamList& params, const ParamList& grads);

}  // namespace qeforge::nn
