// Acceptance suite: one PASS/FAIL line per criterion.
//
//   qeforge_acceptance [--cli PATH] [--only 1,4,13] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "qeforge/attention.hpp"
#include "qeforge/boosting.hpp"
#include "qeforge/checkpoint.hpp"
#include "qeforge/config.hpp"
#include "qeforge/error.hpp"
#include "qeforge/estimator.hpp"
#include "qeforge/eval.hpp"
#include "qeforge/experiment.hpp"
#include "qeforge/gradcheck.hpp"
#include "qeforge/losses.hpp"
#include "qeforge/lstm.hpp"
#include "qeforge/predictor.hpp"
#include "qeforge/predictor_train.hpp"
#include "qeforge/ridge.hpp"
#include "qeforge/stacking.hpp"
#include "qeforge/synthetic.hpp"

namespace fs = std::filesystem;
using namespace qeforge;
using nn::Tensor2;
using nn::Vector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  std::string cli;
  fs::path work;
};

// -- helpers ------------------------------------------------------------------------

Tensor2 random_matrix(int rows, int cols, Rng& rng, double bound = 1.0) {
  Tensor2 m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
  return m;
}

Vector random_vector(int n, Rng& rng, double bound = 1.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform(rng, -bound, bound);
  return v;
}

double weighted_sum(const Tensor2& a, const Tensor2& r) { return (a.array() * r.array()).sum(); }

struct Tiny {
  corpus::Vocab source;
  corpus::Vocab target;
  std::vector<predictor::EncodedPair> pairs;
};

Tiny tiny_task() {
  const std::vector<std::pair<corpus::Tokens, corpus::Tokens>> raw = {
      {{"a", "b", "c"}, {"x", "y", "z"}}, {{"b", "c"}, {"y", "z"}}, {{"c", "a", "d"}, {"z", "x", "w"}}};
  std::vector<corpus::Tokens> src, tgt;
  for (const auto& [s, t] : raw) {
    src.push_back(s);
    tgt.push_back(t);
  }
  Tiny t{corpus::build_vocab(src), corpus::build_vocab(tgt), {}};
  for (const auto& [s, y] : raw) t.pairs.push_back(predictor::encode_pair(s, y, t.source, t.target));
  return t;
}

predictor::PredictorParams tiny_predictor(const Tiny& task, predictor::Architecture arch, std::uint64_t seed) {
  predictor::PredictorShape s;
  s.architecture = arch;
  s.source_vocab_size = task.source.size();
  s.target_vocab_size = task.target.size();
  s.embedding_dim = arch == predictor::Architecture::kRnn ? 3 : 4;
  s.hidden = 4;
  s.layers = arch == predictor::Architecture::kRnn ? 2 : 1;
  s.heads = 2;
  s.ff_hidden = 6;
  predictor::PredictorParams p(s, task.source.fingerprint(), task.target.fingerprint());
  Rng rng(seed);
  predictor::init_predictor(p, rng);
  for (auto& t : p.collect())
    if (t.name.find("norm") == std::string::npos)
      for (double& v : t.values()) v *= 5.0;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

synthetic::SyntheticConfig desk_synthetic() { return ExperimentConfig::desk().synthetic; }

// -- 1. gradient suite ------------------------------------------------------------------

Outcome gradient_suite(const Options&) {
  std::vector<std::pair<std::string, double>> results;
  std::string worst_entry;
  double worst_seen = -1.0;
  auto record = [&](const std::string& name, const nn::GradCheckReport& r) {
    results.emplace_back(name, r.max_relative_error);
    if (r.max_relative_error > worst_seen) {
      worst_seen = r.max_relative_error;
      worst_entry = fmt::format("{}[{}] analytic {:.6e} numeric {:.6e}", r.worst_tensor, r.worst_index,
                                r.worst_analytic, r.worst_numeric);
    }
  };
  Rng rng(101);

  {
    Tensor2 x = random_matrix(3, 4, rng), w = random_matrix(4, 2, rng);
    Vector b = random_vector(2, rng);
    const Tensor2 r = random_matrix(3, 2, rng);
    auto g = nn::affine_backward(x, w, r);
    record("affine", nn::grad_check([&] { return weighted_sum(nn::affine(x, w, b), r); },
                                    {nn::tensor_ref("x", x), nn::tensor_ref("w", w), nn::tensor_ref("b", b)},
                                    {nn::tensor_ref("x", g.dx), nn::tensor_ref("w", g.dw), nn::tensor_ref("b", g.db)}));
  }
  {
    Vector z = random_vector(6, rng, 2.0);
    const Vector r = random_vector(6, rng);
    Vector dz = nn::softmax_backward(nn::softmax(z), r);
    record("softmax", nn::grad_check([&] { return nn::softmax(z).dot(r); }, {nn::tensor_ref("z", z)},
                                     {nn::tensor_ref("z", dz)}));
    Vector dx = nn::sigmoid_backward(nn::sigmoid(z), r);
    record("sigmoid", nn::grad_check([&] { return nn::sigmoid(z).dot(r); }, {nn::tensor_ref("z", z)},
                                     {nn::tensor_ref("z", dx)}));
  }
  for (bool reverse : {false, true}) {
    nn::LstmStack stack(3, 4, 2);
    nn::ParamList params;
    stack.collect(params, "lstm");
    nn::fill_uniform(params, rng, 0.5);
    Tensor2 x = random_matrix(4, 3, rng);
    const Tensor2 r = random_matrix(4, 4, rng);
    nn::LstmRunCache cache;
    nn::lstm_stack_run(stack, x, reverse, &cache);
    nn::LstmStack grads(3, 4, 2);
    Tensor2 dx = nn::lstm_stack_backward(stack, cache, r, grads);
    nn::ParamList analytic;
    grads.collect(analytic, "lstm");
    params.push_back(nn::tensor_ref("x", x));
    analytic.push_back(nn::tensor_ref("x", dx));
    record(reverse ? "lstm-bptt-reverse" : "lstm-bptt",
           nn::grad_check([&] { return weighted_sum(nn::lstm_stack_run(stack, x, reverse), r); }, params, analytic));
  }
  for (auto mask : {nn::AttentionMask::kNone, nn::AttentionMask::kCausal}) {
    Tensor2 q = random_matrix(3, 4, rng), k = random_matrix(3, 4, rng), v = random_matrix(3, 2, rng);
    const Tensor2 r = random_matrix(3, 2, rng);
    nn::AttentionCache cache;
    nn::scaled_dot_attention(q, k, v, mask, &cache);
    auto g = nn::scaled_dot_attention_backward(cache, r);
    record(mask == nn::AttentionMask::kNone ? "attention" : "attention-causal",
           nn::grad_check([&] { return weighted_sum(nn::scaled_dot_attention(q, k, v, mask), r); },
                          {nn::tensor_ref("q", q), nn::tensor_ref("k", k), nn::tensor_ref("v", v)},
                          {nn::tensor_ref("q", g.dq), nn::tensor_ref("k", g.dk), nn::tensor_ref("v", g.dv)}));
  }

  const auto task = tiny_task();
  const auto noise = corpus::noise_distribution(task.target);
  for (auto arch : {predictor::Architecture::kRnn, predictor::Architecture::kTransformer})
    for (auto loss : {predictor::LossKind::kCrossEntropy, predictor::LossKind::kNce, predictor::LossKind::kNeg}) {
      auto params = tiny_predictor(task, arch, 202);
      const auto& pair = task.pairs[0];
      Rng nrng(303);
      const auto negatives = predictor::draw_negatives(pair, noise, 3, true, nrng);
      auto grads = params.zeros_like();
      predictor::pair_loss(params, pair, loss, negatives, &noise, {}, &grads);
      record("predictor-" + predictor::to_string(arch) + "-" + predictor::to_string(loss),
             nn::grad_check([&] { return predictor::pair_loss(params, pair, loss, negatives, &noise, {}, nullptr).loss; },
                            params.collect(), grads.collect()));
    }

  {
    const auto pred = tiny_predictor(task, predictor::Architecture::kRnn, 404);
    estimator::EstimatorShape shape;
    shape.input_dim = pred.shape.state_dim();
    shape.hidden = 5;
    estimator::EstimatorParams est(shape);
    Rng erng(505);
    nn::fill_uniform(est.collect(), erng, 0.5);
    const auto qefvs = predictor::extract_qefv(pred, task.pairs[2]);
    auto grads = est.zeros_like();
    estimator::squared_error_and_grad(est, qefvs, 0.3, &grads);
    record("estimator", nn::grad_check([&] { return estimator::squared_error_and_grad(est, qefvs, 0.3, nullptr); },
                                       est.collect(), grads.collect()));
  }

  double worst = 0.0;
  std::string worst_name, failing;
  for (const auto& [name, err] : results) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
    if (!(err < 1e-4)) failing += " " + name + "=" + fmt::format("{:.2e}", err);
  }
  return {failing.empty(), fmt::format("{} checks, worst {} at {:.2e} ({}){}", results.size(), worst_name, worst,
                                       worst_entry, failing.empty() ? "" : "; over 1e-4:" + failing)};
}

// -- 2. hand-computed loss oracles ---------------------------------------------------------

Outcome loss_oracles(const Options&) {
  const double ce = predictor::ce_loss(Vector::Constant(4, 0.25), 1).loss;
  const corpus::NoiseDistribution q({0, 0, 0, 0, 1, 1});
  const std::vector<int> neg = {5};
  const double nce = predictor::nce_loss(Vector::Ones(2), Tensor2::Zero(2, 6), 4, neg, q).loss;
  const double ng = predictor::neg_loss(Vector::Ones(2), Tensor2::Zero(2, 6), 4, neg).loss;
  Tensor2 qm(1, 2), k(2, 2), v(2, 2);
  qm << 1, 0;
  k << 1, 0, 0, 1;
  v << 1, 0, 0, 1;
  nn::AttentionCache cache;
  const Tensor2 out = nn::scaled_dot_attention(qm, k, v, nn::AttentionMask::kNone, &cache);
  const bool pass = std::abs(ce - std::log(4.0)) < 1e-12 && std::abs(nce - 1.5041) < 1e-3 &&
                    std::abs(ng - 2 * std::log(2.0)) < 1e-6 && std::abs(cache.weights(0, 0) - 0.6698) < 1e-4 &&
                    std::abs(cache.weights(0, 1) - 0.3302) < 1e-4 && std::abs(out(0, 0) - 0.6698) < 1e-4 &&
                    std::abs(out(0, 1) - 0.3302) < 1e-4;
  return {pass, fmt::format("ce {:.6f} nce {:.6f} neg {:.6f} attention [{:.4f}, {:.4f}]", ce, nce, ng,
                            cache.weights(0, 0), cache.weights(0, 1))};
}

// -- 3. memorization -----------------------------------------------------------------------

Outcome memorization(const Options&) {
  const auto lexicon = synthetic::make_lexicon("xx", 20, 31);
  Rng rng(32);
  std::vector<corpus::Tokens> sentences;
  for (int i = 0; i < 50; ++i) {
    corpus::Tokens s;
    const int len = 4 + static_cast<int>(uniform_index(rng, 7));
    for (int k = 0; k < len; ++k) s.push_back(lexicon[uniform_index(rng, lexicon.size())]);
    sentences.push_back(s);
  }
  const auto vocab = corpus::build_vocab(sentences);
  std::vector<predictor::EncodedPair> data;
  for (const auto& s : sentences) data.push_back(predictor::encode_pair(s, s, vocab, vocab));

  predictor::PredictorShape shape;
  shape.source_vocab_size = vocab.size();
  shape.target_vocab_size = vocab.size();
  shape.embedding_dim = 32;
  shape.hidden = 32;
  shape.layers = 2;
  predictor::PredictorParams p(shape, vocab.fingerprint(), vocab.fingerprint());
  predictor::init_predictor(p, rng);
  predictor::PredictorTrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 10;
  cfg.adam.learning_rate = 1e-2;
  cfg.dropout = 0.0;
  const auto r = predictor::train_predictor(std::move(p), cfg, data, data, nullptr, rng);
  int first = 0;
  double best = 0.0;
  for (const auto& e : r.log) {
    best = std::max(best, e.valid_accuracy);
    if (first == 0 && e.valid_accuracy > 0.99) first = e.epoch;
  }
  const auto final_eval =
      predictor::evaluate_predictor(r.params, data, predictor::LossKind::kCrossEntropy, 0, false, nullptr);
  return {final_eval.accuracy > 0.99,
          fmt::format("accuracy {:.4f} (best epoch {}, first epoch above 99%: {})", final_eval.accuracy, r.best_epoch,
                      first == 0 ? std::string("none") : std::to_string(first))};
}

// -- 4. estimator signal -------------------------------------------------------------------

Outcome estimator_signal(const Options&) {
  auto sc = desk_synthetic();
  const auto bench = synthetic::generate(sc, 41, {{"ro", "en", false}});
  const auto& pair = bench.pairs[0];
  const auto vocabs = experiment::build_vocabularies(bench);
  auto cfg = ExperimentConfig::desk();
  cfg.predictor_train.epochs = 20;
  Rng rng(42);
  auto pred = experiment::init_params(experiment::shape_for(cfg.predictor, vocabs), vocabs, rng);
  pred = experiment::fit_predictor(std::move(pred), cfg.predictor_train, pair.parallel, vocabs, rng);
  auto ecfg = cfg.estimator_train;
  ecfg.epochs = 50;
  const auto est = experiment::fit_estimator(pred, cfg.estimator, ecfg, pair.qe_train, pair.qe_valid, vocabs, rng);
  const auto preds = estimator::predict_batch(pred, est.params,
                                              estimator::encode_samples(pair.qe_valid, vocabs.source, vocabs.target));
  const double selected = experiment::pearson_against(preds, pair.qe_valid);
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& e : est.log)
    if (e.valid_pearson > best) {
      best = e.valid_pearson;
      best_epoch = e.epoch;
    }
  return {best > 0.9,
          fmt::format("{} train / {} valid, best validation Pearson {:.4f} at epoch {}; MSE-selected epoch {} has {:.4f}",
                      pair.qe_train.size(), pair.qe_valid.size(), best, best_epoch, est.best_epoch, selected)};
}

// -- 5. QEFV contract ---------------------------------------------------------------------

Outcome qefv_contract(const Options&) {
  const auto task = tiny_task();
  auto p = tiny_predictor(task, predictor::Architecture::kRnn, 51);
  const auto& pair = task.pairs[0];
  for (int j = 1; j <= pair.target_length(); ++j) p.output_projection.col(pair.target[static_cast<std::size_t>(j)]).setOnes();
  const auto fwd = predictor::predictor_forward(p, pair);
  const auto q = predictor::extract_qefv(p, pair);
  const bool identity = q.vectors == fwd.pre_projection;

  predictor::PredictorShape full;
  full.source_vocab_size = task.source.size();
  full.target_vocab_size = task.target.size();
  predictor::PredictorParams big(full, task.source.fingerprint(), task.target.fingerprint());
  Rng rng(52);
  predictor::init_predictor(big, rng);
  const auto qb = predictor::extract_qefv(big, pair);
  const bool shape = qb.length() == pair.target_length() && qb.dim() == 800;
  return {identity && shape, fmt::format("identity column exact: {}; default shape {}x{} for T_y={}", identity,
                                         qb.length(), qb.dim(), pair.target_length())};
}

// -- 6 / 7. relational checks on one low-resource pair ----------------------------------------

struct Arm {
  bool pretrain = false;
  int augmentation = 0;
};

double low_resource_arm(const Arm& arm, std::uint64_t seed) {
  const auto bench = synthetic::generate(desk_synthetic(), seed, {{"ro", "en", false}, {"en", "de", true}});
  const auto vocabs = experiment::build_vocabularies(bench);
  const auto& source_pair = bench.pair("ro-en");
  const auto& target_pair = bench.pair("en-de");
  const auto cfg = ExperimentConfig::desk();
  const auto shape = experiment::shape_for(cfg.predictor, vocabs);
  // Both arms of a comparison share this stream, so the fine-tuning
  // initialization is identical apart from the transferred tensors.
  Rng rng(derive_seed(seed, "arm"));
  auto initial = experiment::init_params(shape, vocabs, rng);
  if (arm.pretrain) {
    Rng pre_rng(derive_seed(seed, "pretrain"));
    auto pre_cfg = cfg.predictor_train;
    pre_cfg.epochs = cfg.pretrain_epochs;
    const auto pretrained = experiment::fit_predictor(experiment::init_params(shape, vocabs, pre_rng), pre_cfg,
                                                      source_pair.parallel, vocabs, pre_rng);
    const auto dir = fs::temp_directory_path() / fmt::format("qeforge-acceptance-transfer-{}", seed);
    fs::create_directories(dir);
    checkpoint::save_predictor(pretrained, dir / "pretrained.qfc");
    initial = checkpoint::load_pretrained_excluding_embeddings(dir / "pretrained.qfc", std::move(initial));
    fs::remove_all(dir);
  }
  std::vector<corpus::ParallelPair> data = target_pair.parallel;
  data.insert(data.end(), target_pair.augmentation.begin(), target_pair.augmentation.begin() + arm.augmentation);
  const auto pred = experiment::fit_predictor(std::move(initial), cfg.predictor_train, data, vocabs, rng);
  const auto est = experiment::fit_estimator(pred, cfg.estimator, cfg.estimator_train, target_pair.qe_train,
                                             target_pair.qe_valid, vocabs, rng);
  const auto preds = estimator::predict_batch(
      pred, est.params, estimator::encode_samples(target_pair.qe_valid, vocabs.source, vocabs.target));
  return experiment::pearson_against(preds, target_pair.qe_valid);
}

Outcome paired_runs(const Arm& treated, const Arm& control, const std::string& label) {
  int wins = 0;
  std::string runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double a = low_resource_arm(treated, seed);
    const double b = low_resource_arm(control, seed);
    wins += a >= b;
    runs += fmt::format(" {:.3f}/{:.3f}", a, b);
  }
  return {wins >= 4, fmt::format("{} wins {}/5 ({} vs control per seed:{})", label, wins, label, runs)};
}

Outcome transfer(const Options&) { return paired_runs({true, 0}, {false, 0}, "transfer"); }

Outcome data_size(const Options&) { return paired_runs({false, 200}, {false, 0}, "D2"); }

// -- 8. ridge oracle -------------------------------------------------------------------------

Outcome ridge_oracle(const Options&) {
  Rng rng(81);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor2 x = random_matrix(20, 5, rng);
    const Vector y = random_vector(20, rng);
    for (double alpha : {0.0, 0.5, 3.0}) {
      const Tensor2 xc = x.rowwise() - x.colwise().mean();
      const Vector yc = y.array() - y.mean();
      const Vector w =
          (xc.transpose() * xc + alpha * Tensor2::Identity(5, 5)).ldlt().solve(xc.transpose() * yc);
      worst = std::max(worst, (ensemble::ridge_fit(x, y, alpha).weights - w).cwiseAbs().maxCoeff());
    }
  }
  const auto grid = ensemble::StackGrid::defaults();
  const bool has_half = std::find(grid.alphas.begin(), grid.alphas.end(), 0.5) != grid.alphas.end();
  return {worst < 1e-8 && has_half,
          fmt::format("max |dw| {:.2e} over 60 problems; alpha 0.5 in default grid: {}", worst, has_half)};
}

// -- 9. boosted-tree oracles ---------------------------------------------------------------------

Outcome gbt_oracles(const Options&) {
  Tensor2 x(4, 1);
  x << 0, 0, 1, 1;
  Vector y(4);
  y << 1, 1, 3, 3;
  ensemble::GbtConfig cfg;
  cfg.rounds = 1;
  cfg.eta = 1.0;
  cfg.lambda = 1.0;
  cfg.base_score = 0.0;
  cfg.max_depth = 0;
  const double leaf = ensemble::gbt_fit(x, y, cfg).trees.at(0).nodes.at(0).weight;
  cfg.max_depth = 1;
  const auto split = ensemble::gbt_predict(ensemble::gbt_fit(x, y, cfg), x);
  Rng rng(91);
  const Tensor2 xr = random_matrix(50, 4, rng);
  const Vector yr = (xr.col(0).array() * 2 + xr.col(1).array().square()).matrix() + random_vector(50, rng, 0.2);
  ensemble::GbtConfig big;
  big.rounds = 100;
  big.eta = 0.1;
  big.gamma = 0.0;
  std::vector<double> curve;
  ensemble::gbt_fit(xr, yr, big, &curve);
  int increases = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) increases += curve[i] > curve[i - 1];
  const bool pass = std::abs(leaf - 1.6) < 1e-12 && std::abs(split(0) - 2.0 / 3.0) < 1e-12 &&
                    std::abs(split(2) - 2.0) < 1e-12 && increases == 0 && curve.size() == 100;
  return {pass, fmt::format("leaf {:.15f}; split leaves {:.15f} / {:.15f}; MSE {:.4f} -> {:.4f} with {} increases",
                            leaf, split(0), split(2), curve.front(), curve.back(), increases)};
}

// -- 10. stacking dominance and planted recovery ---------------------------------------------------

Outcome stacking(const Options&) {
  Rng rng(101);
  const int n = 80;
  Tensor2 x(n, 7);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    y(i) = uniform(rng, -1, 1);
    for (int m = 0; m < 4; ++m) x(i, m) = y(i) * (0.3 + 0.2 * m) + uniform(rng, -1, 1);
    x(i, 4) = 4 + static_cast<double>(uniform_index(rng, 7));
    x(i, 5) = 4 + static_cast<double>(uniform_index(rng, 7));
    x(i, 6) = x(i, 5) / x(i, 4);
  }
  auto mse = [&](const Vector& p) { return (p - y).squaredNorm() / n; };
  const double stacked = mse(ensemble::ridge_predict(ensemble::ridge_fit(x, y, 0.0), x));
  double best_single = 1e300;
  for (int m = 0; m < 4; ++m) {
    const Tensor2 c = x.col(m);
    best_single = std::min(best_single, mse(ensemble::ridge_predict(ensemble::ridge_fit(c, y, 0.0), c)));
  }

  ensemble::FeatureSet dev;
  dev.names = {"m1", "m2", "src_len", "tgt_len", "len_ratio"};
  for (int i = 0; i < 200; ++i) {
    const double m1 = uniform(rng, -2, 2), m2 = uniform(rng, -2, 2);
    const double s = 4 + static_cast<double>(uniform_index(rng, 7)), t = 4 + static_cast<double>(uniform_index(rng, 7));
    dev.rows.push_back({{m1, m2, s, t, t / s}, 0.7 * m1 + 0.3 * m2});
  }
  const auto fit = ensemble::stack_fit(dev, ensemble::RegressorKind::kRidge, 5, ensemble::StackGrid::defaults(), rng);
  const double w1 = fit.model.ridge.weights(0), w2 = fit.model.ridge.weights(1);
  const bool pass = stacked <= best_single && std::abs(w1 - 0.7) <= 0.05 && std::abs(w2 - 0.3) <= 0.05;
  return {pass, fmt::format("stacked MSE {:.5f} vs best single affine {:.5f}; planted weights {:.4f}, {:.4f}", stacked,
                            best_single, w1, w2)};
}

// -- 11. ensemble relational check ----------------------------------------------------------------

Outcome ensemble_direction(const Options& opt) {
  const std::vector<std::string> members = {"base", "neg", "D2", "ro"};
  int wins = 0;
  std::string runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = ExperimentConfig::desk();
    cfg.seed = seed;
    const auto bench = synthetic::generate(cfg.synthetic, seed);
    const auto vocabs = experiment::build_vocabularies(bench);
    const auto dev_gold = experiment::qe_split(bench, &synthetic::PairData::qe_valid);
    const auto root = opt.work / fmt::format("ensemble-seed{}", seed);
    std::vector<std::vector<estimator::ScoredPrediction>> dev_preds;
    double best_single = -1.0;
    for (const auto& name : members) {
      const auto art = experiment::run_submodel(experiment::submodel_spec(name), cfg, bench, vocabs, root);
      best_single = std::max(best_single, art.dev_pearson);
      dev_preds.push_back(art.dev);
    }
    const auto features = ensemble::assemble_features(dev_preds, dev_gold);
    Rng rng(derive_seed(seed, "stack"));
    const auto fit = ensemble::stack_fit(features, ensemble::RegressorKind::kGbt, cfg.ensemble.folds,
                                         cfg.ensemble.grid, rng);
    const double stacked = fit.report.settings[fit.report.best].oof_pearson;
    wins += stacked >= best_single - 0.02;
    runs += fmt::format(" {:.3f}/{:.3f}", stacked, best_single);
  }
  return {wins >= 4, fmt::format("{} sub-models; stacked out-of-fold vs best single dev Pearson per seed:{}; {}/5",
                                 members.size(), runs, wins)};
}

// -- 12. Pearson oracle --------------------------------------------------------------------------

Outcome pearson_oracle(const Options&) {
  using V = std::vector<double>;
  const double a = eval::pearson(V{1, 2, 3}, V{2, 4, 6});
  const double b = eval::pearson(V{1, 2, 3}, V{6, 4, 2});
  const double c = eval::pearson(V{1, 2, 3, 4}, V{1, 3, 2, 4});
  Rng rng(121);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 3 + uniform_index(rng, 40);
    V p(n), g(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = uniform(rng, -3, 3);
      g[i] = 0.5 * p[i] + uniform(rng, -3, 3);
    }
    const double scale = uniform(rng, 0.01, 100.0), shift = uniform(rng, -50, 50);
    for (std::size_t i = 0; i < n; ++i) t[i] = scale * p[i] + shift;
    worst = std::max(worst, std::abs(eval::pearson(t, g) - eval::pearson(p, g)));
  }
  const bool pass = std::abs(a - 1) < 1e-12 && std::abs(b + 1) < 1e-12 && std::abs(c - 0.8) < 1e-12 && worst < 1e-12;
  return {pass, fmt::format("r = {:.15f}, {:.15f}, {:.15f}; max affine drift {:.2e} over 1000 vectors", a, b, c, worst)};
}

// -- 13. determinism ----------------------------------------------------------------------------

Outcome determinism(const Options& opt) {
  if (opt.cli.empty()) return {false, "no --cli path given"};
  std::vector<std::string> outputs;
  for (const char* run : {"run1", "run2"}) {
    const auto dir = opt.work / "determinism" / run;
    fs::remove_all(dir);
    fs::create_directories(dir.parent_path());
    const auto cmd =
        fmt::format("\"{}\" --seed 7 --out-dir \"{}\" experiment --preset baseline > \"{}.log\" 2>&1", opt.cli,
                    dir.string(), dir.string());
    if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + cmd};
    outputs.push_back(slurp(dir / "baseline" / "predictions.tsv"));
  }
  const bool same = !outputs[0].empty() && outputs[0] == outputs[1];
  return {same, fmt::format("predictions.tsv {} bytes, identical: {}", outputs[0].size(), same)};
}

// -- 14. checkpoint round trip ---------------------------------------------------------------------

Outcome checkpoints(const Options& opt) {
  const auto task = tiny_task();
  auto p = tiny_predictor(task, predictor::Architecture::kTransformer, 141);
  const auto dir = opt.work / "checkpoint";
  fs::create_directories(dir);
  const auto path = dir / "p.qfc";
  checkpoint::save_predictor(p, path);
  auto q = checkpoint::load_predictor(path);
  double diff = 0.0;
  auto lp = p.collect();
  auto lq = q.collect();
  for (std::size_t t = 0; t < lp.size(); ++t)
    for (std::size_t i = 0; i < lp[t].values().size(); ++i)
      diff = std::max(diff, std::abs(static_cast<double>(static_cast<float>(lp[t].values()[i])) - lq[t].values()[i]));

  auto expect = [&](auto corrupt, auto check) {
    checkpoint::save_predictor(p, path);
    corrupt();
    try {
      checkpoint::load_predictor(path);
    } catch (const checkpoint::CheckpointError& e) {
      return check(e);
    }
    return false;
  };
  const bool truncated = expect([&] { fs::resize_file(path, fs::file_size(path) - 5); },
                                [](const auto& e) { return dynamic_cast<const checkpoint::PayloadError*>(&e) != nullptr; });
  const bool version = expect(
      [&] {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put(static_cast<char>(42));
      },
      [](const auto& e) { return dynamic_cast<const checkpoint::FormatVersionError*>(&e) != nullptr; });
  const bool manifest = expect(
      [&] {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.write("}}}}", 4);
      },
      [](const auto& e) { return dynamic_cast<const checkpoint::ManifestError*>(&e) != nullptr; });
  const bool pass = diff == 0.0 && truncated && version && manifest;
  return {pass, fmt::format("max |diff| {} at float32; truncated->PayloadError {}; version->FormatVersionError {}; "
                            "manifest->ManifestError {}",
                            diff, truncated, version, manifest)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  std::set<int> only;
  opt.work = fs::temp_directory_path() / "qeforge-acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      opt.cli = argv[++i];
    } else if (a == "--work" && i + 1 < argc) {
      opt.work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string id;
      while (std::getline(ss, id, ',')) only.insert(std::stoi(id));
    } else {
      std::cerr << "usage: qeforge_acceptance [--cli PATH] [--only 1,2,...] [--work DIR]\n";
      return 2;
    }
  }
  fs::remove_all(opt.work);
  fs::create_directories(opt.work);

  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},
      {2, "loss oracles", loss_oracles},
      {3, "memorization", memorization},
      {4, "estimator signal", estimator_signal},
      {5, "QEFV contract", qefv_contract},
      {6, "transfer", transfer},
      {7, "data size", data_size},
      {8, "ridge oracle", ridge_oracle},
      {9, "boosted-tree oracles", gbt_oracles},
      {10, "stacking", stacking},
      {11, "ensemble direction", ensemble_direction},
      {12, "Pearson oracle", pearson_oracle},
      {13, "determinism", determinism},
      {14, "checkpoint round trip", checkpoints},
  };

  int failed = 0;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run(opt);
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !out.pass;
    std::cout << fmt::format("[{}] {:>2} {}: {} ({:.1f}s)", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail, secs)
              << std::endl;
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << fmt::format("{} failed, total {:.1f}s", failed, total) << std::endl;
  return failed == 0 ? 0 : 1;
}
