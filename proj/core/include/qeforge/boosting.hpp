#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/tensor.hpp"

namespace qeforge::ensemble {

using nn::Tensor2;
using nn::Vector;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // rows with x[feature] < threshold go left
  int left = -1;
  int right = -1;
  double weight = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
};

/// Nodes stored flat; node 0 is the root.
struct RegressionTree {
  std::vector<TreeNode> nodes;
  int max_depth = 0;

  double predict(const double* row) const;
  /// Index of the leaf a row lands in.
  int route(const double* row) const;
  int depth() const;
  nlohmann::json to_json() const;
  static RegressionTree from_json(const nlohmann::json& j, int max_depth);
};

struct GbtConfig {
  int rounds = 100;
  double eta = 0.1;
  double lambda = 1.0;
  double gamma = 0.0;
  int max_depth = 3;
  std::optional<double> base_score;  // target mean when unset

  nlohmann::json to_json() const;
  static GbtConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct BoostedModel {
  double base = 0.0;
  std::vector<RegressionTree> trees;
  double eta = 0.1;
  double lambda = 1.0;
  double gamma = 0.0;
  int feature_count = 0;

  nlohmann::json to_json() const;
  static BoostedModel from_json(const nlohmann::json& j);
};

/// Second-order boosting with squared-error loss (g = pred - y, h = 1) and
/// exact greedy splits. When `train_mse` is given it receives the training
/// MSE after each round.
BoostedModel gbt_fit(const Tensor2& x, const Vector& y, const GbtConfig& config,
                     std::vector<double>* train_mse = nullptr);

Vector gbt_predict(const BoostedModel& model, const Tensor2& x);

}  // namespace qeforge::ensemble
