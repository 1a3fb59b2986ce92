#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/config.hpp"
#include "qeforge/estimator.hpp"
#include "qeforge/eval.hpp"
#include "qeforge/synthetic.hpp"

namespace qeforge::experiment {

struct Vocabularies {
  corpus::Vocab source;
  corpus::Vocab target;
};

/// Shared vocabularies over every corpus of the benchmark (parallel,
/// augmentation and QE training data), so all sub-models agree on K_x and K_y.
Vocabularies build_vocabularies(const synthetic::Benchmark& bench);

std::vector<predictor::EncodedPair> encode_parallel(std::span<const corpus::ParallelPair> data,
                                                    const Vocabularies& vocabs);

/// `base` with vocabulary sizes filled in (and embedding_dim tied to hidden
/// for the transformer).
predictor::PredictorShape shape_for(predictor::PredictorShape base, const Vocabularies& vocabs);

/// Fresh predictor with uniform initial weights.
predictor::PredictorParams init_params(const predictor::PredictorShape& shape, const Vocabularies& vocabs,
                                       Rng& rng);

/// Trains `initial` on parallel data; sampled losses draw negatives from the
/// target vocabulary's frequency distribution.
predictor::PredictorParams fit_predictor(predictor::PredictorParams initial,
                                         const predictor::PredictorTrainConfig& config,
                                         std::span<const corpus::ParallelPair> data,
                                         const Vocabularies& vocabs, Rng& rng);

estimator::EstimatorTrainResult fit_estimator(const predictor::PredictorParams& predictor,
                                              estimator::EstimatorShape shape,
                                              const estimator::EstimatorTrainConfig& config,
                                              std::span<const corpus::QESample> train,
                                              std::span<const corpus::QESample> valid,
                                              const Vocabularies& vocabs, Rng& rng);

/// Pearson between predictions and the samples' gold scores.
double pearson_against(std::span<const estimator::ScoredPrediction> preds,
                       std::span<const corpus::QESample> gold);

/// Concatenation of one split over all pairs, in benchmark order.
std::vector<corpus::QESample> qe_split(const synthetic::Benchmark& bench,
                                       std::vector<corpus::QESample> synthetic::PairData::*split);

struct SubModelSpec {
  std::string name;
  predictor::Architecture architecture = predictor::Architecture::kRnn;
  predictor::LossKind loss = predictor::LossKind::kCrossEntropy;
  int augmentation = 0;       // extra parallel pairs per low-resource pair
  std::string pretrain_pair;  // empty: random initialization
};

/// "base", "transformer", "nce", "neg", "D1", "D2", "D3", "D5", or a language
/// ("de", "zh", "ro", "et", "ne") for a predictor pretrained on that pair.
SubModelSpec submodel_spec(const std::string& name);

struct SubModelArtifacts {
  SubModelSpec spec;
  std::filesystem::path dir;
  std::vector<estimator::ScoredPrediction> dev;   // QE validation split, all pairs
  std::vector<estimator::ScoredPrediction> test;  // QE test split, all pairs
  double dev_pearson = 0.0;
};

/// Trains (or reuses from `root`/submodels when the config hash matches) one
/// predictor + estimator and predicts the dev and test splits.
SubModelArtifacts run_submodel(const SubModelSpec& spec, const ExperimentConfig& config,
                               const synthetic::Benchmark& bench, const Vocabularies& vocabs,
                               const std::filesystem::path& root);

struct PresetResult {
  std::string preset;
  eval::EvalReport report;
  std::filesystem::path predictions;
  nlohmann::json manifest;
};

std::vector<std::string> preset_names();

/// Sub-model names stacked by an ensemble preset; empty for single-model
/// presets.
std::vector<std::string> ensemble_members(const std::string& preset);

/// Runs `config.preset` under `out_dir`: data (generated when no data_dir is
/// configured), sub-models, optional stacking, test-set report, and an upsert
/// into `out_dir`/results.tsv.
PresetResult run_preset(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Inserts or replaces the row keyed by (preset, config hash) under an
/// exclusive lock on the table.
void upsert_results(const std::filesystem::path& table, const std::string& preset,
                    const std::string& config_hash, std::uint64_t seed, const eval::EvalReport& report);

}  // namespace qeforge::experiment
