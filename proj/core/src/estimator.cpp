#include "qeforge/estimator.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "qeforge/checkpoint.hpp"
#include "qeforge/error.hpp"
#include "qeforge/eval.hpp"
#include "qeforge/parallel.hpp"

namespace qeforge::estimator {

std::string to_string(OutputActivation a) {
  switch (a) {
    case OutputActivation::kIdentity: return "identity";
    case OutputActivation::kSigmoid: return "sigmoid";
    case OutputActivation::kAffineSigmoid: return "affine-sigmoid";
  }
  return "identity";
}

OutputActivation parse_activation(const std::string& s) {
  if (s == "identity") return OutputActivation::kIdentity;
  if (s == "sigmoid") return OutputActivation::kSigmoid;
  if (s == "affine-sigmoid") return OutputActivation::kAffineSigmoid;
  throw ConfigError("unknown estimator activation '" + s + "'");
}

nlohmann::json EstimatorShape::to_json() const {
  return {{"input_dim", input_dim},       {"hidden", hidden},
          {"layers", layers},             {"activation", to_string(activation)},
          {"sigmoid_low", sigmoid_low},   {"sigmoid_high", sigmoid_high}};
}

EstimatorShape EstimatorShape::from_json(const nlohmann::json& j) {
  EstimatorShape s;
  s.input_dim = j.value("input_dim", s.input_dim);
  s.hidden = j.value("hidden", s.hidden);
  s.layers = j.value("layers", s.layers);
  s.activation = parse_activation(j.value("activation", to_string(s.activation)));
  s.sigmoid_low = j.value("sigmoid_low", s.sigmoid_low);
  s.sigmoid_high = j.value("sigmoid_high", s.sigmoid_high);
  return s;
}

EstimatorParams::EstimatorParams(const EstimatorShape& s)
    : shape(s),
      bilstm(s.input_dim, s.hidden, s.layers),
      output_weight(Vector::Zero(2 * s.hidden)),
      output_bias(Vector::Zero(1)) {
  if (s.input_dim < 1 || s.hidden < 1 || s.layers < 1)
    throw ConfigError("estimator: dimensions must be positive");
  if (s.activation == OutputActivation::kAffineSigmoid && !(s.sigmoid_high > s.sigmoid_low))
    throw ConfigError("estimator: affine-sigmoid needs sigmoid_high > sigmoid_low");
}

nn::ParamList EstimatorParams::collect() {
  nn::ParamList out;
  bilstm.collect(out, "estimator.bilstm");
  out.push_back(nn::tensor_ref("estimator.output_weight", output_weight));
  out.push_back(nn::tensor_ref("estimator.output_bias", output_bias));
  return out;
}

EstimatorParams EstimatorParams::zeros_like() const {
  EstimatorParams z(shape);
  z.source_fingerprint = source_fingerprint;
  z.target_fingerprint = target_fingerprint;
  return z;
}

void init_estimator(EstimatorParams& params, Rng& rng) {
  nn::fill_uniform(params.collect(), rng, 0.1);
}

namespace {

struct Activated {
  double value;
  double derivative;
};

Activated activate(const EstimatorShape& s, double z) {
  switch (s.activation) {
    case OutputActivation::kIdentity: return {z, 1.0};
    case OutputActivation::kSigmoid: {
      const double y = nn::sigmoid(z);
      return {y, y * (1.0 - y)};
    }
    case OutputActivation::kAffineSigmoid: {
      const double y = nn::sigmoid(z);
      const double span = s.sigmoid_high - s.sigmoid_low;
      return {s.sigmoid_low + span * y, span * y * (1.0 - y)};
    }
  }
  return {z, 1.0};
}

}  // namespace

double estimate_score(const EstimatorParams& params, const predictor::QEFVSequence& qefvs,
                      EstimateTrace* trace) {
  if (qefvs.length() < 1) throw ShapeError("estimate_score: empty QEFV sequence");
  if (qefvs.dim() != params.shape.input_dim)
    throw ShapeError(fmt::format("estimate_score: QEFV dimension {} but estimator expects {}",
                                 qefvs.dim(), params.shape.input_dim));
  EstimateTrace local;
  auto& t = trace ? *trace : local;
  t.outputs = nn::bilstm_run(params.bilstm, qefvs.vectors, &t.bilstm);
  t.pooled = t.outputs.colwise().mean().transpose();
  t.pre_activation = params.output_weight.dot(t.pooled) + params.output_bias(0);
  t.score = activate(params.shape, t.pre_activation).value;
  return t.score;
}

double squared_error_and_grad(const EstimatorParams& params, const predictor::QEFVSequence& qefvs,
                              double target, EstimatorParams* grads, Tensor2* d_qefv) {
  EstimateTrace t;
  const double score = estimate_score(params, qefvs, &t);
  const double err = score - target;
  if (!grads && !d_qefv) return err * err;

  const double d_pre = 2.0 * err * activate(params.shape, t.pre_activation).derivative;
  const Vector d_pooled = d_pre * params.output_weight;
  const auto T = static_cast<double>(t.outputs.rows());
  Tensor2 d_outputs = Tensor2::Zero(t.outputs.rows(), t.outputs.cols());
  d_outputs.rowwise() = (d_pooled / T).transpose();

  EstimatorParams scratch;
  EstimatorParams* g = grads;
  if (!g) {
    scratch = params.zeros_like();
    g = &scratch;
  }
  g->output_weight += d_pre * t.pooled;
  g->output_bias(0) += d_pre;
  Tensor2 dx = nn::bilstm_backward(params.bilstm, t.bilstm, d_outputs, g->bilstm);
  if (d_qefv) *d_qefv = std::move(dx);
  return err * err;
}

nlohmann::json EstimatorTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", adam.learning_rate},
          {"clip_norm", clip_norm}};
}

EstimatorTrainConfig EstimatorTrainConfig::from_json(const nlohmann::json& j) {
  EstimatorTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  return c;
}

void EstimatorTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("estimator training needs at least one epoch");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

std::vector<EncodedSample> encode_samples(std::span<const corpus::QESample> samples,
                                          const corpus::Vocab& source_vocab,
                                          const corpus::Vocab& target_vocab) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({predictor::encode_pair(s.source_tokens, s.target_tokens, source_vocab, target_vocab),
                   s.score, s.language_pair});
  return out;
}

std::vector<predictor::QEFVSequence> extract_all(const predictor::PredictorParams& predictor,
                                                 std::span<const EncodedSample> samples,
                                                 int threads) {
  std::vector<predictor::QEFVSequence> out(samples.size());
  parallel_for(samples.size(), threads,
               [&](std::size_t i) { out[i] = predictor::extract_qefv(predictor, samples[i].pair); });
  return out;
}

namespace {

struct Pass {
  double mse = 0.0;
  double pearson = std::numeric_limits<double>::quiet_NaN();
};

Pass evaluate(const EstimatorParams& params, const std::vector<predictor::QEFVSequence>& qefvs,
              std::span<const EncodedSample> samples) {
  Pass p;
  if (samples.empty()) return p;
  std::vector<double> pred(samples.size()), gold(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    pred[i] = estimate_score(params, qefvs[i]);
    gold[i] = samples[i].score;
    p.mse += (pred[i] - gold[i]) * (pred[i] - gold[i]);
  }
  p.mse /= static_cast<double>(samples.size());
  try {
    p.pearson = eval::pearson(pred, gold);
  } catch (const Error&) {
  }
  return p;
}

}  // namespace

EstimatorTrainResult train_estimator(EstimatorParams initial, const EstimatorTrainConfig& config,
                                     const predictor::PredictorParams& predictor,
                                     std::span<const EncodedSample> train,
                                     std::span<const EncodedSample> valid, Rng& rng) {
  config.validate();
  if (train.empty()) throw ConfigError("train_estimator: empty training data");
  if (initial.shape.input_dim != predictor.shape.state_dim())
    throw ShapeError("train_estimator: estimator input dimension must equal the predictor's 2d");
  for (const auto& s : train) predictor::check_vocab(predictor, s.pair);
  for (const auto& s : valid) predictor::check_vocab(predictor, s.pair);

  // The predictor is frozen and runs in inference mode, so its QEFVs are the
  // same every batch; extract them once.
  const auto train_qefv = extract_all(predictor, train, config.threads);
  const auto valid_qefv = extract_all(predictor, valid, config.threads);

  EstimatorTrainResult result;
  EstimatorParams params = std::move(initial);
  params.source_fingerprint = predictor.source_fingerprint;
  params.target_fingerprint = predictor.target_fingerprint;
  EstimatorParams grads = params.zeros_like();
  auto param_list = params.collect();
  auto grad_list = grads.collect();
  nn::AdamState adam(config.adam);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  result.params = params;
  long batch_index = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    qeforge::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      nn::fill_zero(grad_list);
      double loss = 0.0;
      for (std::size_t b = start; b < end; ++b)
        loss += squared_error_and_grad(params, train_qefv[order[b]], train[order[b]].score, &grads);
      if (!std::isfinite(loss))
        throw NumericError(fmt::format("train_estimator: non-finite loss in epoch {} batch {}",
                                       epoch, batch_index));
      nn::scale(grad_list, 1.0 / static_cast<double>(end - start));
      nn::clip_global_norm(grad_list, config.clip_norm);
      nn::adam_step(adam, param_list, grad_list);
      ++batch_index;
    }

    EstimatorEpochLog log;
    log.epoch = epoch;
    log.train_mse = evaluate(params, train_qefv, train).mse;
    double selection = log.train_mse;
    if (!valid.empty()) {
      const auto v = evaluate(params, valid_qefv, valid);
      log.valid_mse = v.mse;
      log.valid_pearson = v.pearson;
      selection = v.mse;
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

std::vector<ScoredPrediction> predict_batch(const predictor::PredictorParams& predictor,
                                            const EstimatorParams& estimator,
                                            std::span<const EncodedSample> samples, int threads) {
  if (estimator.source_fingerprint != predictor.source_fingerprint ||
      estimator.target_fingerprint != predictor.target_fingerprint)
    throw VocabMismatchError("estimator was trained with a different predictor vocabulary");
  for (const auto& s : samples) predictor::check_vocab(predictor, s.pair);
  std::vector<ScoredPrediction> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto q = predictor::extract_qefv(predictor, samples[i].pair);
    out[i] = {estimate_score(estimator, q), samples[i].language_pair, i};
  });
  return out;
}

void save_estimator(const EstimatorParams& params, const std::filesystem::path& path) {
  checkpoint::Manifest m;
  m.architecture = "estimator";
  m.hyperparameters = params.shape.to_json();
  m.source_vocab_hash = checkpoint::hash_to_hex(params.source_fingerprint);
  m.target_vocab_hash = checkpoint::hash_to_hex(params.target_fingerprint);
  auto copy = params;
  checkpoint::write(path, std::move(m), copy.collect());
}

EstimatorParams load_estimator(const std::filesystem::path& path) {
  const auto ckpt = checkpoint::read(path);
  if (ckpt.manifest.architecture != "estimator")
    throw checkpoint::ManifestError(path.string() + " is not an estimator checkpoint");
  EstimatorParams params(EstimatorShape::from_json(ckpt.manifest.hyperparameters));
  params.source_fingerprint = checkpoint::hex_to_hash(ckpt.manifest.source_vocab_hash);
  params.target_fingerprint = checkpoint::hex_to_hash(ckpt.manifest.target_vocab_hash);
  checkpoint::restore(ckpt, params.collect());
  return params;
}

void write_predictions(const std::filesystem::path& path, std::span<const ScoredPrediction> preds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : preds)
    out << p.index << '\t' << p.language_pair << '\t' << fmt::format("{:.17g}", p.score) << '\n';
}

std::vector<ScoredPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::vector<ScoredPrediction> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw ParseError(path.string(), n, "expected index<TAB>language_pair<TAB>score");
    ScoredPrediction p;
    const auto idx = std::string_view(line).substr(0, t1);
    const auto sc = std::string_view(line).substr(t2 + 1);
    auto r1 = std::from_chars(idx.data(), idx.data() + idx.size(), p.index);
    auto r2 = std::from_chars(sc.data(), sc.data() + sc.size(), p.score);
    if (r1.ec != std::errc{} || r1.ptr != idx.data() + idx.size() || r2.ec != std::errc{} ||
        r2.ptr != sc.data() + sc.size() || !std::isfinite(p.score))
      throw ParseError(path.string(), n, "bad index or score");
    p.language_pair = line.substr(t1 + 1, t2 - t1 - 1);
    out.push_back(std::move(p));
  }
  return out;
}

int threads_from_env() {
  const char* v = std::getenv("QEFORGE_THREADS");
  if (!v || !*v) return 1;
  int n = 1;
  const auto [ptr, ec] = std::from_chars(v, v + std::strlen(v), n);
  if (ec != std::errc{} || n < 1) return 1;
  return n;
}

}  // namespace qeforge::estimator
