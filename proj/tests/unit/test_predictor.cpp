#include <gtest/gtest.h>

#include "qeforge/error.hpp"
#include "qeforge/gradcheck.hpp"
#include "qeforge/predictor.hpp"
#include "qeforge/predictor_train.hpp"
#include "support.hpp"

using namespace qeforge;
using namespace qeforge::predictor;
using qeforge::testing::tiny_predictor;
using qeforge::testing::tiny_shape;
using qeforge::testing::tiny_task;

TEST(PredictorShape, JsonRoundTripAndValidation) {
  PredictorShape s = PredictorShape::transformer_shape();
  s.source_vocab_size = 10;
  s.target_vocab_size = 12;
  const auto back = PredictorShape::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(s.layers, 6);
  PredictorShape bad;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TokenDistribution, SumsToOneAndPositive) {
  const auto task = tiny_task();
  for (auto arch : {Architecture::kRnn, Architecture::kTransformer}) {
    const auto p = tiny_predictor(task, 1, arch);
    for (const auto& pair : task.pairs)
      for (int j = 1; j <= pair.target_length(); ++j) {
        const Vector d = predict_token_distribution(p, pair, j);
        ASSERT_EQ(d.size(), task.target.size());
        EXPECT_NEAR(d.sum(), 1.0, 1e-9);
        EXPECT_GT(d.minCoeff(), 0.0);
      }
  }
}

TEST(TokenDistribution, ZeroModelIsUniform) {
  const auto task = tiny_task();
  PredictorParams p(tiny_shape(task), task.source.fingerprint(), task.target.fingerprint());
  const Vector d = predict_token_distribution(p, task.pairs[0], 2);
  for (int k = 0; k < d.size(); ++k) EXPECT_NEAR(d(k), 1.0 / task.target.size(), 1e-15);
}

TEST(TokenDistribution, RejectsBadPositionAndForeignVocab) {
  const auto task = tiny_task();
  const auto p = tiny_predictor(task, 2);
  const auto& pair = task.pairs[0];
  EXPECT_THROW(predict_token_distribution(p, pair, 0), ShapeError);
  EXPECT_THROW(predict_token_distribution(p, pair, pair.target_length() + 1), ShapeError);
  auto foreign = pair;
  foreign.target_fingerprint ^= 1;
  EXPECT_THROW(predict_token_distribution(p, foreign, 1), VocabMismatchError);
}

TEST(Qefv, IdentityAndZeroColumns) {
  const auto task = tiny_task();
  auto p = tiny_predictor(task, 3);
  const auto& pair = task.pairs[0];
  const int y1 = pair.target[1];
  const int y2 = pair.target[2];
  p.output_projection.col(y1).setOnes();
  p.output_projection.col(y2).setZero();
  const auto fwd = predictor_forward(p, pair);
  const auto q = extract_qefv(p, pair);
  ASSERT_EQ(q.length(), pair.target_length());
  EXPECT_EQ(q.dim(), p.shape.state_dim());
  EXPECT_EQ((q.vectors.row(0) - fwd.pre_projection.row(0)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(q.vectors.row(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Qefv, DefaultShapeGivesWidth800) {
  const auto task = tiny_task();
  PredictorShape s;
  s.source_vocab_size = task.source.size();
  s.target_vocab_size = task.target.size();
  PredictorParams p(s, task.source.fingerprint(), task.target.fingerprint());
  Rng rng(4);
  init_predictor(p, rng);
  const auto q = extract_qefv(p, task.pairs[0]);
  EXPECT_EQ(q.length(), 3);
  EXPECT_EQ(q.dim(), 800);
}

TEST(Qefv, DeterministicAndEmptyTargetRejected) {
  const auto task = tiny_task();
  const auto p = tiny_predictor(task, 5);
  EXPECT_EQ(extract_qefv(p, task.pairs[1]).vectors, extract_qefv(p, task.pairs[1]).vectors);
  const auto empty = encode_pair({"a"}, {}, task.source, task.target);
  EXPECT_THROW(extract_qefv(p, empty), ShapeError);
}

struct GradCase {
  Architecture arch;
  LossKind loss;
};

class PredictorGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(PredictorGradient, FullNetworkMatchesFiniteDifferences) {
  const auto [arch, loss] = GetParam();
  const auto task = tiny_task();
  auto params = tiny_predictor(task, 6, arch);
  const auto& pair = task.pairs[0];  // three target tokens
  ASSERT_EQ(pair.target_length(), 3);
  const auto noise = corpus::noise_distribution(task.target);
  Rng rng(7);
  const auto negatives = draw_negatives(pair, noise, 3, true, rng);
  auto grads = params.zeros_like();
  pair_loss(params, pair, loss, negatives, &noise, {}, &grads);
  nn::GradCheckOptions opts;
  opts.max_entries_per_tensor = 24;
  opts.seed = 11;
  opts.step = 1e-4;
  const auto rep = nn::grad_check(
      [&] { return pair_loss(params, pair, loss, negatives, &noise, {}, nullptr).loss; }, params.collect(),
      grads.collect(), opts);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst_tensor << "[" << rep.worst_index << "] analytic "
                                          << rep.worst_analytic << " numeric " << rep.worst_numeric;
  EXPECT_GT(rep.entries_checked, 100u);
}

INSTANTIATE_TEST_SUITE_P(
    Predictor, PredictorGradient,
    ::testing::Values(GradCase{Architecture::kRnn, LossKind::kCrossEntropy},
                      GradCase{Architecture::kRnn, LossKind::kNce}, GradCase{Architecture::kRnn, LossKind::kNeg},
                      GradCase{Architecture::kTransformer, LossKind::kCrossEntropy},
                      GradCase{Architecture::kTransformer, LossKind::kNeg}),
    [](const auto& info) { return to_string(info.param.arch) + "_" + to_string(info.param.loss); });

TEST(PredictorTraining, NegArgmaxAgreesWithCrossEntropy) {
  // Six target words; k = K_y - 1 negatives with the positive allowed.
  const std::vector<std::pair<corpus::Tokens, corpus::Tokens>> raw = {
      {{"a", "b", "c"}, {"u", "v", "w"}}, {{"b", "d"}, {"v", "x"}},      {{"e", "a", "f"}, {"y", "u", "z"}},
      {{"c", "c", "d"}, {"w", "w", "x"}}, {{"f", "e"}, {"z", "y"}},      {{"a", "f", "b"}, {"u", "z", "v"}},
      {{"d", "e", "c"}, {"x", "y", "w"}}, {{"b", "a"}, {"v", "u"}},
  };
  std::vector<corpus::Tokens> src, tgt;
  for (const auto& [s, t] : raw) {
    src.push_back(s);
    tgt.push_back(t);
  }
  const auto sv = corpus::build_vocab(src);
  const auto tv = corpus::build_vocab(tgt);
  ASSERT_EQ(tv.size() - corpus::Vocab::kNumReserved, 6);
  std::vector<EncodedPair> data;
  for (const auto& [s, t] : raw) data.push_back(encode_pair(s, t, sv, tv));
  const auto noise = corpus::noise_distribution(tv);

  PredictorShape shape;
  shape.source_vocab_size = sv.size();
  shape.target_vocab_size = tv.size();
  shape.embedding_dim = 16;
  shape.hidden = 16;
  shape.layers = 1;

  auto train = [&](LossKind kind) {
    PredictorParams p(shape, sv.fingerprint(), tv.fingerprint());
    Rng rng(21);
    init_predictor(p, rng);
    PredictorTrainConfig cfg;
    cfg.epochs = 150;
    cfg.batch_size = 4;
    cfg.adam.learning_rate = 1e-2;
    cfg.loss = kind;
    cfg.negatives = tv.size() - 1;
    cfg.exclude_positive = false;
    cfg.dropout = 0.0;
    return train_predictor(p, cfg, data, {}, &noise, rng).params;
  };
  const auto ce = train(LossKind::kCrossEntropy);
  const auto neg = train(LossKind::kNeg);
  int agree = 0, total = 0;
  for (const auto& pair : data)
    for (int j = 1; j <= pair.target_length(); ++j) {
      // Reserved ids carry no noise mass, so NEG never scores them; compare
      // over the six word ids.
      const int words = tv.size() - corpus::Vocab::kNumReserved;
      Eigen::Index a = 0, b = 0;
      predict_token_distribution(ce, pair, j).tail(words).maxCoeff(&a);
      predict_token_distribution(neg, pair, j).tail(words).maxCoeff(&b);
      agree += a == b;
      ++total;
    }
  EXPECT_GE(agree, 0.95 * total) << agree << "/" << total;
}
