#pragma once

#include <span>
#include <vector>

#include "qeforge/corpus.hpp"
#include "qeforge/tensor.hpp"

namespace qeforge::predictor {

using nn::Tensor2;
using nn::Vector;

struct CrossEntropyResult {
  double loss = 0.0;
  Vector d_logits;  // probs - onehot(target)
  bool clamped = false;
};

/// -log probs[target]. A zero probability is clamped to 1e-30 and flagged.
CrossEntropyResult ce_loss(const Vector& probs, int target);

/// Loss over a handful of output-projection columns. The gradient w.r.t.
/// column columns[i] of W is state * d_scores[i] (columns may repeat).
struct SampledLossResult {
  double loss = 0.0;
  Vector d_state;
  std::vector<int> columns;
  std::vector<double> d_scores;
};

/// Noise-contrastive estimation. Each scored word w is classified as data
/// with probability e^s / (e^s + k Q(w)), k = negatives.size(). Throws when
/// the target (or a negative) has zero noise mass.
SampledLossResult nce_loss(const Vector& state, const Tensor2& output_projection, int target,
                           std::span<const int> negatives,
                           const corpus::NoiseDistribution& noise);

/// Negative sampling: -[log sigma(s+) + sum log sigma(-s')].
SampledLossResult neg_loss(const Vector& state, const Tensor2& output_projection, int target,
                           std::span<const int> negatives);

/// Adds the column gradients of a sampled loss into d_projection.
void accumulate_columns(const SampledLossResult& r, const Vector& state, Tensor2& d_projection);

}  // namespace qeforge::predictor
