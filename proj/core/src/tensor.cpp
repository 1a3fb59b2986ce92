#include "qeforge/tensor.hpp"

#include <cmath>

#include "qeforge/error.hpp"

namespace qeforge::nn {

void fill_uniform(const ParamList& params, Rng& rng, double bound) {
  for (const auto& p : params)
    for (double& v : p.values()) v = uniform(rng, -bound, bound);
}

void fill_zero(const ParamList& params) {
  for (const auto& p : params)
    for (double& v : p.values()) v = 0.0;
}

double global_norm(const ParamList& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(const ParamList& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) scale(grads, max_norm / norm);
  return norm;
}

void scale(const ParamList& grads, double factor) {
  for (const auto& g : grads)
    for (double& v : g.values()) v *= factor;
}

void check_finite(const ParamList& tensors) {
  for (const auto& t : tensors)
    for (double v : t.values())
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor '" + t.name + "'");
}

Tensor2 affine(const Tensor2& x, const Tensor2& w, const Vector& b) {
  if (x.cols() != w.rows() || w.cols() != b.size())
    throw ShapeError("affine: dimension mismatch");
  Tensor2 y = x * w;
  y.rowwise() += b.transpose();
  return y;
}

AffineGrads affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& dy) {
  if (x.rows() != dy.rows() || w.cols() != dy.cols() || x.cols() != w.rows())
    throw ShapeError("affine_backward: dimension mismatch");
  AffineGrads g;
  g.dx = dy * w.transpose();
  g.dw = x.transpose() * dy;
  g.db = dy.colwise().sum().transpose();
  return g;
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Tensor2 softmax_rows(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    auto e = (row.array() - row.maxCoeff()).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

Vector softmax_backward(const Vector& probs, const Vector& d_probs) {
  return probs.cwiseProduct((d_probs.array() - d_probs.dot(probs)).matrix());
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(const Vector& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Vector sigmoid_backward(const Vector& y, const Vector& dy) {
  return dy.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
}

double log_sigmoid(double x) {
  // log sigma(x) = -softplus(-x)
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

DropoutResult dropout(const Tensor2& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  DropoutResult r;
  r.mask = Tensor2::Ones(x.rows(), x.cols());
  if (!training || rate == 0.0) {
    r.output = x;
    return r;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < r.mask.size(); ++i)
    r.mask.data()[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
  r.output = x.cwiseProduct(r.mask);
  return r;
}

}  // namespace qeforge::nn
