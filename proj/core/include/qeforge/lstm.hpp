#pragma once

#include <string>
#include <vector>

#include "qeforge/tensor.hpp"

namespace qeforge::nn {

/// One LSTM cell. Gate pre-activations are laid out [input, forget, output,
/// candidate] along the 4*hidden axis.
struct LstmCellParams {
  Tensor2 w_input;   // input_dim x 4h
  Tensor2 w_hidden;  // h x 4h
  Vector bias;       // 4h

  LstmCellParams() = default;
  LstmCellParams(int input_dim, int hidden);

  int input_dim() const noexcept { return static_cast<int>(w_input.rows()); }
  int hidden() const noexcept { return static_cast<int>(w_hidden.rows()); }
  void collect(ParamList& out, const std::string& prefix);
};

struct LstmState {
  Vector h;
  Vector c;
};

/// Everything the backward step needs.
struct LstmStepCache {
  Vector x, h_prev, c_prev;
  Vector i, f, o, g;
  Vector c, tanh_c;
};

LstmState lstm_cell_step(const LstmCellParams& params, const Vector& x,
                         const Vector& h_prev, const Vector& c_prev,
                         LstmStepCache* cache = nullptr);

struct LstmStepGrads {
  Vector dx;
  Vector dh_prev;
  Vector dc_prev;
};

/// Backpropagates dL/dh_t and dL/dc_t through one step, accumulating parameter
/// gradients into `grads`.
LstmStepGrads lstm_cell_backward(const LstmCellParams& params, const LstmStepCache& cache,
                                 const Vector& dh, const Vector& dc,
                                 LstmCellParams& grads);

/// Layers of LSTM cells run in one direction; layer l consumes layer l-1's
/// hidden states.
struct LstmStack {
  std::vector<LstmCellParams> layers;

  LstmStack() = default;
  LstmStack(int input_dim, int hidden, int num_layers);

  int hidden() const noexcept { return layers.empty() ? 0 : layers.back().hidden(); }
  int input_dim() const noexcept { return layers.empty() ? 0 : layers.front().input_dim(); }
  void collect(ParamList& out, const std::string& prefix);
};

struct LstmRunCache {
  std::vector<std::vector<LstmStepCache>> steps;  // [layer][position]
  bool reverse = false;
};

/// Runs the stack over the rows of `inputs` (left to right, or right to left
/// when reverse). Output row t is the top-layer state after consuming row t.
Tensor2 lstm_stack_run(const LstmStack& stack, const Tensor2& inputs, bool reverse,
                       LstmRunCache* cache = nullptr);

/// Backpropagation through time. Returns dL/dinputs.
Tensor2 lstm_stack_backward(const LstmStack& stack, const LstmRunCache& cache,
                            const Tensor2& d_outputs, LstmStack& grads);

struct BiLstmParams {
  LstmStack forward;
  LstmStack backward;

  BiLstmParams() = default;
  BiLstmParams(int input_dim, int hidden, int num_layers);

  int output_dim() const noexcept { return forward.hidden() + backward.hidden(); }
  void collect(ParamList& out, const std::string& prefix);
};

struct BiLstmCache {
  LstmRunCache forward;
  LstmRunCache backward;
};

/// Row t of the result is [forward h_t ; backward h_t]. Throws on an empty
/// sequence.
Tensor2 bilstm_run(const BiLstmParams& params, const Tensor2& inputs,
                   BiLstmCache* cache = nullptr);
Tensor2 bilstm_backward(const BiLstmParams& params, const BiLstmCache& cache,
                        const Tensor2& d_outputs, BiLstmParams& grads);

}  // namespace qeforge::nn
