#include "qeforge/attention.hpp"

#include <cmath>
#include <limits>

#include "qeforge/error.hpp"

namespace qeforge::nn {

Tensor2 scaled_dot_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                             AttentionMask mask, AttentionCache* cache) {
  if (k.rows() != v.rows()) throw ShapeError("attention: K and V row counts differ");
  if (q.cols() != k.cols()) throw ShapeError("attention: Q and K column counts differ");
  if (k.rows() == 0) throw ShapeError("attention: no keys");
  if (mask != AttentionMask::kNone && q.rows() != k.rows())
    throw ShapeError("attention: masked attention needs as many queries as keys");

  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Tensor2 scores = (q * k.transpose()) * scale;
  Tensor2 weights(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index lo = 0, hi = scores.cols();  // allowed keys [lo, hi)
    if (mask == AttentionMask::kCausal) hi = r + 1;
    if (mask == AttentionMask::kAnticausal) lo = r;
    weights.row(r).setZero();
    auto seg = scores.row(r).segment(lo, hi - lo);
    auto e = (seg.array() - seg.maxCoeff()).exp();
    weights.row(r).segment(lo, hi - lo) = e / e.sum();
  }
  Tensor2 out = weights * v;
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->weights = std::move(weights);
    cache->scale = scale;
  }
  return out;
}

AttentionGrads scaled_dot_attention_backward(const AttentionCache& c, const Tensor2& d_out) {
  AttentionGrads g;
  Tensor2 d_weights = d_out * c.v.transpose();
  g.dv = c.weights.transpose() * d_out;
  // Row-wise softmax backward; masked entries have zero weight and so zero
  // gradient automatically.
  Tensor2 d_scores = c.weights.cwiseProduct(d_weights);
  const Eigen::VectorXd row_dot = d_scores.rowwise().sum();
  d_scores -= (c.weights.array().colwise() * row_dot.array()).matrix();
  d_scores *= c.scale;
  g.dq = d_scores * c.k;
  g.dk = d_scores.transpose() * c.q;
  return g;
}

}  // namespace qeforge::nn
