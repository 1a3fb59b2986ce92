#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/predictor.hpp"

namespace qeforge::predictor {

struct PredictorTrainConfig {
  int epochs = 10;
  int batch_size = 64;
  nn::AdamConfig adam;  // lr 2e-3
  LossKind loss = LossKind::kCrossEntropy;
  int negatives = 100;
  bool exclude_positive = true;
  double noise_exponent = 1.0;
  double dropout = 0.5;
  double clip_norm = 5.0;

  nlohmann::json to_json() const;
  static PredictorTrainConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct PredictorEpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean summed loss per sentence
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
  int clamped = 0;
};

struct PredictorTrainResult {
  PredictorParams params;  // validation-best
  std::vector<PredictorEpochLog> log;
  int best_epoch = 0;
};

/// Trains from `initial` (freshly initialized or transferred weights) with
/// shuffled mini-batches and Adam. Positions whose targets have no noise mass
/// are skipped by the sampled losses. Returns the parameters with the lowest
/// validation loss (training loss when `valid` is empty).
PredictorTrainResult train_predictor(PredictorParams initial, const PredictorTrainConfig& config,
                                     std::span<const EncodedPair> train,
                                     std::span<const EncodedPair> valid,
                                     const corpus::NoiseDistribution* noise, Rng& rng);

struct PredictorEvaluation {
  double loss = 0.0;      // mean per sentence
  double accuracy = 0.0;  // argmax hits / positions
};

/// Inference-mode loss and masked-token accuracy. Sampled losses draw their
/// negatives from a generator seeded with `seed`.
PredictorEvaluation evaluate_predictor(const PredictorParams& params,
                                       std::span<const EncodedPair> data, LossKind kind,
                                       int negatives, bool exclude_positive,
                                       const corpus::NoiseDistribution* noise,
                                       std::uint64_t seed = 0x5eed);

/// Draws negatives for every target position of `pair`.
std::vector<corpus::Ids> draw_negatives(const EncodedPair& pair, const corpus::NoiseDistribution& noise,
                                        int k, bool exclude_positive, Rng& rng);

}  // namespace qeforge::predictor
