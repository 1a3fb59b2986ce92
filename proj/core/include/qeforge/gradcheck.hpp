#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "qeforge/tensor.hpp"

namespace qeforge::nn {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor: relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded random subset per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares `analytic` against central finite differences of `loss` taken by
/// perturbing `params` in place (each entry is restored afterwards).
GradCheckReport grad_check(const std::function<double()>& loss, const ParamList& params,
                           const ParamList& analytic, const GradCheckOptions& options = {});

}  // namespace qeforge::nn
