#include "qeforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qeforge/error.hpp"
#include "qeforge/rng.hpp"

namespace qeforge::nn {

GradCheckReport grad_check(const std::function<double()>& loss, const ParamList& params,
                           const ParamList& analytic, const GradCheckOptions& options) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: list size mismatch");
  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size())
      throw ShapeError("grad_check: shape mismatch for '" + params[t].name + "'");
    auto values = params[t].values();
    auto grads = analytic[t].values();

    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_entries_per_tensor && order.size() > options.max_entries_per_tensor) {
      qeforge::shuffle(order.begin(), order.end(), rng);
      order.resize(options.max_entries_per_tensor);
    }

    for (std::size_t idx : order) {
      const double saved = values[idx];
      values[idx] = saved + options.step;
      const double plus = loss();
      values[idx] = saved - options.step;
      const double minus = loss();
      values[idx] = saved;

      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = grads[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_relative_error || !std::isfinite(rel)) {
        report.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_tensor = params[t].name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace qeforge::nn
