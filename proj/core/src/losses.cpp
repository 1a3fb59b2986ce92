#include "qeforge/losses.hpp"

#include <cmath>

#include "qeforge/error.hpp"

namespace qeforge::predictor {

namespace {

constexpr double kMinProb = 1e-30;

void check_column(const Tensor2& w, const Vector& state, int col) {
  if (w.rows() != state.size()) throw ShapeError("sampled loss: state/projection mismatch");
  if (col < 0 || col >= w.cols()) throw ShapeError("sampled loss: column out of range");
}

}  // namespace

CrossEntropyResult ce_loss(const Vector& probs, int target) {
  if (target < 0 || target >= probs.size()) throw ShapeError("ce_loss: target out of range");
  CrossEntropyResult r;
  double p = probs(target);
  if (p < kMinProb) {
    p = kMinProb;
    r.clamped = true;
  }
  r.loss = -std::log(p);
  r.d_logits = probs;
  r.d_logits(target) -= 1.0;
  return r;
}

SampledLossResult nce_loss(const Vector& state, const Tensor2& w, int target,
                           std::span<const int> negatives,
                           const corpus::NoiseDistribution& noise) {
  check_column(w, state, target);
  const double k = static_cast<double>(negatives.size());
  if (k < 1) throw ConfigError("nce_loss: need at least one negative");
  const double q_target = noise.probability(target);
  if (q_target <= 0.0) throw NumericError("nce_loss: target has zero noise mass");

  SampledLossResult r;
  r.d_state = Vector::Zero(state.size());
  r.columns.reserve(negatives.size() + 1);
  r.d_scores.reserve(negatives.size() + 1);

  // e^s / (e^s + kQ) == sigma(s - log(kQ))
  const double s_pos = w.col(target).dot(state);
  const double u_pos = s_pos - std::log(k * q_target);
  r.loss -= nn::log_sigmoid(u_pos);
  const double g_pos = nn::sigmoid(u_pos) - 1.0;
  r.columns.push_back(target);
  r.d_scores.push_back(g_pos);
  r.d_state += g_pos * w.col(target);

  for (int neg : negatives) {
    check_column(w, state, neg);
    const double q = noise.probability(neg);
    if (q <= 0.0) throw NumericError("nce_loss: negative sample has zero noise mass");
    const double s = w.col(neg).dot(state);
    const double u = s - std::log(k * q);
    r.loss -= nn::log_sigmoid(-u);
    const double g = nn::sigmoid(u);
    r.columns.push_back(neg);
    r.d_scores.push_back(g);
    r.d_state += g * w.col(neg);
  }
  return r;
}

SampledLossResult neg_loss(const Vector& state, const Tensor2& w, int target,
                           std::span<const int> negatives) {
  check_column(w, state, target);
  SampledLossResult r;
  r.d_state = Vector::Zero(state.size());

  const double s_pos = w.col(target).dot(state);
  r.loss -= nn::log_sigmoid(s_pos);
  const double g_pos = nn::sigmoid(s_pos) - 1.0;
  r.columns.push_back(target);
  r.d_scores.push_back(g_pos);
  r.d_state += g_pos * w.col(target);

  for (int neg : negatives) {
    check_column(w, state, neg);
    const double s = w.col(neg).dot(state);
    r.loss -= nn::log_sigmoid(-s);
    const double g = nn::sigmoid(s);
    r.columns.push_back(neg);
    r.d_scores.push_back(g);
    r.d_state += g * w.col(neg);
  }
  return r;
}

void accumulate_columns(const SampledLossResult& r, const Vector& state, Tensor2& d_projection) {
  for (std::size_t i = 0; i < r.columns.size(); ++i)
    d_projection.col(r.columns[i]) += r.d_scores[i] * state;
}

}  // namespace qeforge::predictor
