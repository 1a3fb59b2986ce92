#pragma once

#include <nlohmann/json.hpp>

#include "qeforge/tensor.hpp"

namespace qeforge::ensemble {

using nn::Tensor2;
using nn::Vector;

/// Linear model on centered features. The intercept is the training target
/// mean and is not penalized.
struct RidgeModel {
  Vector weights;
  double intercept = 0.0;
  double alpha = 0.0;
  Vector means;
  Vector scales;  // all ones; features are centered, not scaled

  int feature_count() const noexcept { return static_cast<int>(weights.size()); }
  nlohmann::json to_json() const;
  static RidgeModel from_json(const nlohmann::json& j);
};

/// Solves (Xc'Xc + alpha I) w = Xc' yc directly. Throws NumericError when the
/// system is singular (only possible at alpha = 0).
RidgeModel ridge_fit(const Tensor2& x, const Vector& y, double alpha);

Vector ridge_predict(const RidgeModel& model, const Tensor2& x);

}  // namespace qeforge::ensemble
