#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/corpus.hpp"
#include "qeforge/lstm.hpp"
#include "qeforge/optim.hpp"
#include "qeforge/predictor.hpp"

namespace qeforge::estimator {

using nn::Tensor2;
using nn::Vector;

enum class OutputActivation { kIdentity, kSigmoid, kAffineSigmoid };

std::string to_string(OutputActivation a);
OutputActivation parse_activation(const std::string& s);

struct EstimatorShape {
  int input_dim = 800;  // predictor's 2d
  int hidden = 400;
  int layers = 1;
  OutputActivation activation = OutputActivation::kIdentity;
  // affine-sigmoid maps sigma(z) onto [low, high]
  double sigmoid_low = 0.0;
  double sigmoid_high = 1.0;

  nlohmann::json to_json() const;
  static EstimatorShape from_json(const nlohmann::json& j);
};

/// BiLSTM over QEFVs, mean pooled over time, then a scalar output layer.
struct EstimatorParams {
  EstimatorShape shape;
  std::uint64_t source_fingerprint = 0;  // of the predictor it was trained with
  std::uint64_t target_fingerprint = 0;
  nn::BiLstmParams bilstm;
  Vector output_weight;  // 2*hidden
  Vector output_bias;    // 1

  EstimatorParams() = default;
  explicit EstimatorParams(const EstimatorShape& shape);

  nn::ParamList collect();
  EstimatorParams zeros_like() const;
};

void init_estimator(EstimatorParams& params, Rng& rng);

struct ScoredPrediction {
  double score = 0.0;
  std::string language_pair;
  std::size_t index = 0;
};

struct EstimateTrace {
  nn::BiLstmCache bilstm;
  Tensor2 outputs;
  Vector pooled;
  double pre_activation = 0.0;
  double score = 0.0;
};

double estimate_score(const EstimatorParams& params, const predictor::QEFVSequence& qefvs,
                      EstimateTrace* trace = nullptr);

/// Squared error (score - target)^2 for one sample; accumulates parameter
/// gradients into `grads` when given and returns dL/dQEFV in `d_qefv` when
/// given.
double squared_error_and_grad(const EstimatorParams& params, const predictor::QEFVSequence& qefvs,
                              double target, EstimatorParams* grads, Tensor2* d_qefv = nullptr);

struct EstimatorTrainConfig {
  int epochs = 50;
  int batch_size = 64;
  nn::AdamConfig adam;  // lr 2e-3
  double clip_norm = 5.0;
  int threads = 1;  // QEFV extraction workers

  nlohmann::json to_json() const;
  static EstimatorTrainConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct EstimatorEpochLog {
  int epoch = 0;
  double train_mse = 0.0;  // full pass at epoch end, inference mode
  double valid_mse = 0.0;
  double valid_pearson = 0.0;  // NaN when undefined
};

struct EstimatorTrainResult {
  EstimatorParams params;  // validation-best
  std::vector<EstimatorEpochLog> log;
  int best_epoch = 0;
};

/// A QE sample encoded for a particular predictor.
struct EncodedSample {
  predictor::EncodedPair pair;
  double score = 0.0;
  std::string language_pair;
};

std::vector<EncodedSample> encode_samples(std::span<const corpus::QESample> samples,
                                          const corpus::Vocab& source_vocab,
                                          const corpus::Vocab& target_vocab);

/// QEFVs for every sample through the frozen predictor; `threads` workers,
/// result order matches input order.
std::vector<predictor::QEFVSequence> extract_all(const predictor::PredictorParams& predictor,
                                                 std::span<const EncodedSample> samples,
                                                 int threads = 1);

/// MSE regression against the samples' scores with the predictor frozen.
/// Selection uses validation MSE (training MSE when `valid` is empty).
EstimatorTrainResult train_estimator(EstimatorParams initial, const EstimatorTrainConfig& config,
                                     const predictor::PredictorParams& predictor,
                                     std::span<const EncodedSample> train,
                                     std::span<const EncodedSample> valid, Rng& rng);

/// One prediction per sample in input order; inference mode.
std::vector<ScoredPrediction> predict_batch(const predictor::PredictorParams& predictor,
                                            const EstimatorParams& estimator,
                                            std::span<const EncodedSample> samples,
                                            int threads = 1);

void save_estimator(const EstimatorParams& params, const std::filesystem::path& path);
EstimatorParams load_estimator(const std::filesystem::path& path);

/// `index<TAB>language_pair<TAB>score` per line.
void write_predictions(const std::filesystem::path& path, std::span<const ScoredPrediction> preds);
std::vector<ScoredPrediction> read_predictions(const std::filesystem::path& path);

/// Worker count from QEFORGE_THREADS (default 1, minimum 1).
int threads_from_env();

}  // namespace qeforge::estimator
