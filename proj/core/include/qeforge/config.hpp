#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "qeforge/estimator.hpp"
#include "qeforge/predictor.hpp"
#include "qeforge/predictor_train.hpp"
#include "qeforge/stacking.hpp"
#include "qeforge/synthetic.hpp"

namespace qeforge {

struct EnsembleSettings {
  int folds = 5;
  ensemble::StackGrid grid = ensemble::StackGrid::defaults();
};

/// Everything an experiment run depends on. Default-constructed values are the
/// full-size settings (d = 400, two LSTM layers, Adam 2e-3, batch 64); desk()
/// shrinks them to run on a laptop CPU in minutes.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string preset = "baseline";
  std::optional<std::filesystem::path> data_dir;  // generated synthetic data when unset
  synthetic::SyntheticConfig synthetic;
  predictor::PredictorShape predictor;  // vocabulary sizes are filled in at run time
  predictor::PredictorTrainConfig predictor_train;
  int pretrain_epochs = 10;
  estimator::EstimatorShape estimator;  // input_dim follows the predictor
  estimator::EstimatorTrainConfig estimator_train;
  EnsembleSettings ensemble;
  std::string groups = "et+ne+ro,zh+de";
  int threads = 1;

  static ExperimentConfig desk();

  nlohmann::json to_json() const;
  /// Missing keys keep full-size defaults, or desk() values when the object
  /// has "profile": "desk".
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;

  /// 16 hex digits over everything except preset, threads and output paths.
  std::string hash() const;
};

}  // namespace qeforge
