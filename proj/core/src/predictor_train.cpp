#include "qeforge/predictor_train.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "qeforge/error.hpp"

namespace qeforge::predictor {

nlohmann::json PredictorTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", adam.learning_rate},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"epsilon", adam.epsilon},
          {"loss", to_string(loss)},
          {"negatives", negatives},
          {"exclude_positive", exclude_positive},
          {"noise_exponent", noise_exponent},
          {"dropout", dropout},
          {"clip_norm", clip_norm}};
}

PredictorTrainConfig PredictorTrainConfig::from_json(const nlohmann::json& j) {
  PredictorTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
  c.loss = parse_loss_kind(j.value("loss", to_string(c.loss)));
  c.negatives = j.value("negatives", c.negatives);
  c.exclude_positive = j.value("exclude_positive", c.exclude_positive);
  c.noise_exponent = j.value("noise_exponent", c.noise_exponent);
  c.dropout = j.value("dropout", c.dropout);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  return c;
}

void PredictorTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("predictor training needs at least one epoch");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (negatives < 1) throw ConfigError("negatives must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

std::vector<corpus::Ids> draw_negatives(const EncodedPair& pair, const corpus::NoiseDistribution& noise,
                                        int k, bool exclude_positive, Rng& rng) {
  std::vector<corpus::Ids> out;
  const int T = pair.target_length();
  out.reserve(static_cast<std::size_t>(T));
  for (int j = 1; j <= T; ++j) {
    const int y = pair.target[static_cast<std::size_t>(j)];
    std::optional<int> exclude;
    if (exclude_positive) exclude = y;
    out.push_back(corpus::sample_negatives(noise, k, exclude, rng));
  }
  return out;
}

PredictorEvaluation evaluate_predictor(const PredictorParams& params,
                                       std::span<const EncodedPair> data, LossKind kind,
                                       int negatives, bool exclude_positive,
                                       const corpus::NoiseDistribution* noise,
                                       std::uint64_t seed) {
  PredictorEvaluation ev;
  if (data.empty()) return ev;
  Rng rng(seed);
  long positions = 0, correct = 0;
  double total = 0.0;
  for (const auto& pair : data) {
    std::vector<corpus::Ids> negs;
    if (kind != LossKind::kCrossEntropy) {
      if (!noise) throw ConfigError("sampled loss evaluation needs a noise distribution");
      negs = draw_negatives(pair, *noise, negatives, exclude_positive, rng);
    }
    const auto r = pair_loss(params, pair, kind, negs, noise, {}, nullptr, true);
    total += r.loss;
    positions += r.positions;
    correct += r.correct;
  }
  ev.loss = total / static_cast<double>(data.size());
  ev.accuracy = positions ? static_cast<double>(correct) / static_cast<double>(positions) : 0.0;
  return ev;
}

PredictorTrainResult train_predictor(PredictorParams initial, const PredictorTrainConfig& config,
                                     std::span<const EncodedPair> train,
                                     std::span<const EncodedPair> valid,
                                     const corpus::NoiseDistribution* noise, Rng& rng) {
  config.validate();
  if (train.empty()) throw ConfigError("train_predictor: empty training data");
  if (config.loss != LossKind::kCrossEntropy && !noise)
    throw ConfigError("train_predictor: sampled losses need a noise distribution");
  for (const auto& p : train) check_vocab(initial, p);
  for (const auto& p : valid) check_vocab(initial, p);

  PredictorTrainResult result;
  PredictorParams params = std::move(initial);
  PredictorParams grads = params.zeros_like();
  auto param_list = params.collect();
  auto grad_list = grads.collect();
  nn::AdamState adam(config.adam);

  const std::uint64_t valid_seed = rng();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  result.params = params;
  ForwardOptions opts{true, config.dropout, &rng};

  long batch_index = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    qeforge::shuffle(order.begin(), order.end(), rng);
    PredictorEpochLog log;
    log.epoch = epoch;
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      nn::fill_zero(grad_list);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& pair = train[order[b]];
        std::vector<corpus::Ids> negs;
        if (config.loss != LossKind::kCrossEntropy)
          negs = draw_negatives(pair, *noise, config.negatives, config.exclude_positive, rng);
        const auto r = pair_loss(params, pair, config.loss, negs, noise, opts, &grads);
        batch_loss += r.loss;
        log.clamped += r.clamped;
      }
      if (!std::isfinite(batch_loss))
        throw NumericError(fmt::format("train_predictor: non-finite loss in epoch {} batch {}",
                                       epoch, batch_index));
      nn::scale(grad_list, 1.0 / static_cast<double>(end - start));
      nn::clip_global_norm(grad_list, config.clip_norm);
      nn::adam_step(adam, param_list, grad_list);
      epoch_loss += batch_loss;
      ++batch_index;
    }
    log.train_loss = epoch_loss / static_cast<double>(train.size());

    double selection = log.train_loss;
    if (!valid.empty()) {
      const auto ev = evaluate_predictor(params, valid, config.loss, config.negatives,
                                         config.exclude_positive, noise, valid_seed);
      log.valid_loss = ev.loss;
      log.valid_accuracy = ev.accuracy;
      selection = ev.loss;
    }
    if (selection < best) {
      best = selection;
      result.best_epoch = epoch;
      result.params = params;
    }
    result.log.push_back(log);
  }
  return result;
}

}  // namespace qeforge::predictor
