#pragma once

#include <string>
#include <vector>

#include "qeforge/attention.hpp"
#include "qeforge/rng.hpp"
#include "qeforge/tensor.hpp"

namespace qeforge::predictor {

using nn::Tensor2;
using nn::Vector;

struct LayerNormParams {
  Vector gain;
  Vector offset;

  LayerNormParams() = default;
  explicit LayerNormParams(int dim);
  void collect(nn::ParamList& out, const std::string& prefix);
};

/// Multi-head attention. Head h owns columns [h*d/H, (h+1)*d/H) of the query,
/// key and value projections.
struct MultiHeadParams {
  Tensor2 w_query, w_key, w_value, w_out;
  Vector b_out;
  int heads = 1;

  MultiHeadParams() = default;
  MultiHeadParams(int dim, int heads);
  void collect(nn::ParamList& out, const std::string& prefix);
};

struct FeedForwardParams {
  Tensor2 w1;
  Vector b1;
  Tensor2 w2;
  Vector b2;

  FeedForwardParams() = default;
  FeedForwardParams(int dim, int hidden);
  void collect(nn::ParamList& out, const std::string& prefix);
};

/// Post-norm transformer block. Decoder blocks carry a cross-attention
/// sublayer over the encoder output.
struct TransformerLayerParams {
  MultiHeadParams self_attention;
  MultiHeadParams cross_attention;  // used only when has_cross
  FeedForwardParams feed_forward;
  LayerNormParams norm_self, norm_cross, norm_ff;
  bool has_cross = false;

  TransformerLayerParams() = default;
  TransformerLayerParams(int dim, int heads, int ff_hidden, bool cross);
  void collect(nn::ParamList& out, const std::string& prefix);
};

struct TransformerStack {
  std::vector<TransformerLayerParams> layers;
  nn::AttentionMask mask = nn::AttentionMask::kNone;

  TransformerStack() = default;
  TransformerStack(int dim, int heads, int ff_hidden, int num_layers, bool cross,
                   nn::AttentionMask mask);
  void collect(nn::ParamList& out, const std::string& prefix);
};

/// Sinusoidal position table, `length` x `dim`.
Tensor2 sinusoidal_positions(int length, int dim);

struct LayerNormCache {
  Tensor2 normalized;
  Vector inv_std;
};

struct MultiHeadCache {
  Tensor2 query_in, kv_in;
  Tensor2 q, k, v, concat;
  std::vector<nn::AttentionCache> heads;
};

struct TransformerLayerCache {
  MultiHeadCache self_attention, cross_attention;
  Tensor2 self_mask, cross_mask, ff_mask;
  LayerNormCache norm_self, norm_cross, norm_ff;
  Tensor2 ff_input, ff_hidden;
};

struct TransformerStackCache {
  std::vector<TransformerLayerCache> layers;
};

/// Runs every layer over `x` (one position per row). `memory` is the encoder
/// output consumed by cross-attention (ignored by encoder stacks).
Tensor2 transformer_stack_run(const TransformerStack& stack, const Tensor2& x,
                              const Tensor2& memory, double dropout_rate, bool training,
                              Rng& rng, TransformerStackCache* cache = nullptr);

/// Returns dL/dx; adds dL/dmemory into `d_memory` (which must be sized like
/// memory for decoder stacks).
Tensor2 transformer_stack_backward(const TransformerStack& stack,
                                   const TransformerStackCache& cache, const Tensor2& d_out,
                                   TransformerStack& grads, Tensor2* d_memory);

}  // namespace qeforge::predictor
