#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qeforge/rng.hpp"

namespace qeforge::nn {

/// Row-major 64-bit matrix. Sequences are stored one position per row.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Non-owning named view of a parameter (or gradient) tensor. Vectors have a
/// one-element shape.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  std::vector<std::size_t> shape;

  std::size_t size() const noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  std::span<double> values() const noexcept { return {data, size()}; }
};

using ParamList = std::vector<TensorRef>;

inline TensorRef tensor_ref(std::string name, Tensor2& t) {
  return {std::move(name), t.data(),
          {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())}};
}

inline TensorRef tensor_ref(std::string name, Vector& v) {
  return {std::move(name), v.data(), {static_cast<std::size_t>(v.size())}};
}

void fill_uniform(const ParamList& params, Rng& rng, double bound = 0.1);
void fill_zero(const ParamList& params);
double global_norm(const ParamList& grads);
/// Rescales grads in place when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
double clip_global_norm(const ParamList& grads, double max_norm);
void scale(const ParamList& grads, double factor);
/// Throws NumericError naming the first tensor holding a non-finite value.
void check_finite(const ParamList& tensors);

// -- affine ----------------------------------------------------------------

/// y = x W + b (b broadcast over rows).
Tensor2 affine(const Tensor2& x, const Tensor2& w, const Vector& b);

struct AffineGrads {
  Tensor2 dx;
  Tensor2 dw;
  Vector db;
};

AffineGrads affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& dy);

// -- activations -------------------------------------------------------------

Vector softmax(const Vector& logits);
/// Row-wise softmax.
Tensor2 softmax_rows(const Tensor2& logits);
/// Gradient w.r.t. logits given the softmax output and upstream gradient.
Vector softmax_backward(const Vector& probs, const Vector& d_probs);

double sigmoid(double x);
Vector sigmoid(const Vector& x);
Vector sigmoid_backward(const Vector& y, const Vector& dy);

/// log(sigmoid(x)) without overflow.
double log_sigmoid(double x);

// -- dropout -----------------------------------------------------------------

/// Inverted dropout. The returned mask holds 0 or 1/(1-rate) per element and is
/// all ones when not training or when rate == 0.
struct DropoutResult {
  Tensor2 output;
  Tensor2 mask;
};

DropoutResult dropout(const Tensor2& x, double rate, bool training, Rng& rng);

}  // namespace qeforge::nn
