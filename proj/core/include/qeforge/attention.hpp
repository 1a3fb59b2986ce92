#pragma once

#include "qeforge/tensor.hpp"

namespace qeforge::nn {

/// Which keys each query row may attend to. Causal/anticausal require square
/// score matrices (self-attention): row t sees keys <= t / >= t.
enum class AttentionMask { kNone, kCausal, kAnticausal };

struct AttentionCache {
  Tensor2 q, k, v;
  Tensor2 weights;  // row-stochastic, masked entries exactly 0
  double scale = 1.0;
};

/// softmax(Q K^T / sqrt(d_k)) V with a row-wise softmax.
Tensor2 scaled_dot_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                             AttentionMask mask = AttentionMask::kNone,
                             AttentionCache* cache = nullptr);

struct AttentionGrads {
  Tensor2 dq, dk, dv;
};

AttentionGrads scaled_dot_attention_backward(const AttentionCache& cache,
                                             const Tensor2& d_out);

}  // namespace qeforge::nn
