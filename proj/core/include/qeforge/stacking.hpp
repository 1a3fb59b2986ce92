#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/boosting.hpp"
#include "qeforge/corpus.hpp"
#include "qeforge/estimator.hpp"
#include "qeforge/ridge.hpp"

namespace qeforge::ensemble {

/// Sub-model scores followed by src_len, tgt_len and len_ratio.
struct FeatureRow {
  std::vector<double> features;
  std::optional<double> target;
};

struct FeatureSet {
  std::vector<std::string> names;  // m1..mM, src_len, tgt_len, len_ratio
  std::vector<FeatureRow> rows;

  int model_count() const noexcept { return static_cast<int>(names.size()) - 3; }
  Tensor2 matrix() const;
  /// Throws when any row lacks a target.
  Vector targets() const;
};

/// Row i = [model_1(i) .. model_M(i), |x_i|, |y_i|, |y_i|/|x_i|]. Every
/// prediction sequence must list the samples in order (index i at position i).
FeatureSet assemble_features(std::span<const std::vector<estimator::ScoredPrediction>> predictions,
                             std::span<const corpus::QESample> samples, bool with_target = true);

/// Header `m1..mM,src_len,tgt_len,len_ratio,target`; the target cell is empty
/// for rows without one.
void write_features_csv(const std::filesystem::path& path, const FeatureSet& set);
FeatureSet read_features_csv(const std::filesystem::path& path);

enum class RegressorKind { kRidge, kGbt };

std::string to_string(RegressorKind k);
RegressorKind parse_regressor_kind(const std::string& s);

struct StackGrid {
  std::vector<double> alphas;
  std::vector<GbtConfig> gbt;

  static StackGrid defaults();
  nlohmann::json to_json() const;
  static StackGrid from_json(const nlohmann::json& j);
};

struct MetaModel {
  RegressorKind kind = RegressorKind::kRidge;
  std::vector<std::string> feature_names;
  RidgeModel ridge;
  BoostedModel gbt;

  Vector predict(const Tensor2& x) const;
  nlohmann::json to_json() const;
  static MetaModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static MetaModel load(const std::filesystem::path& path);
};

struct CvSetting {
  nlohmann::json params;
  std::vector<double> fold_pearson;  // NaN where undefined
  double mean_pearson = 0.0;         // undefined folds count as 0
  double oof_pearson = 0.0;          // over the pooled out-of-fold predictions
  std::string error;                 // non-empty when the setting could not be fitted
};

struct CvReport {
  int folds = 0;
  std::vector<CvSetting> settings;
  std::size_t best = 0;
  Vector best_oof_predictions;

  nlohmann::json to_json() const;
};

struct StackResult {
  MetaModel model;
  CvReport report;
};

/// Shuffles row indices and cuts them into k contiguous folds whose sizes
/// differ by at most one.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, Rng& rng);

/// k-fold CV over the grid for `kind`; the setting with the best mean
/// out-of-fold Pearson is refit on every row.
StackResult stack_fit(const FeatureSet& dev, RegressorKind kind, int k, const StackGrid& grid,
                      Rng& rng);

}  // namespace qeforge::ensemble
