#include "qeforge/lstm.hpp"

#include "qeforge/error.hpp"

namespace qeforge::nn {

LstmCellParams::LstmCellParams(int input_dim, int hidden)
    : w_input(Tensor2::Zero(input_dim, 4 * hidden)),
      w_hidden(Tensor2::Zero(hidden, 4 * hidden)),
      bias(Vector::Zero(4 * hidden)) {}

void LstmCellParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back(tensor_ref(prefix + ".w_input", w_input));
  out.push_back(tensor_ref(prefix + ".w_hidden", w_hidden));
  out.push_back(tensor_ref(prefix + ".bias", bias));
}

LstmState lstm_cell_step(const LstmCellParams& p, const Vector& x, const Vector& h_prev,
                         const Vector& c_prev, LstmStepCache* cache) {
  const Eigen::Index h = p.hidden();
  if (x.size() != p.input_dim() || h_prev.size() != h || c_prev.size() != h)
    throw ShapeError("lstm_cell_step: shape mismatch");

  Vector z = p.w_input.transpose() * x + p.w_hidden.transpose() * h_prev + p.bias;
  Vector i = sigmoid(Vector(z.segment(0, h)));
  Vector f = sigmoid(Vector(z.segment(h, h)));
  Vector o = sigmoid(Vector(z.segment(2 * h, h)));
  Vector g = z.segment(3 * h, h).array().tanh();
  Vector c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  Vector tanh_c = c.array().tanh();
  Vector h_t = o.cwiseProduct(tanh_c);

  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = i;
    cache->f = f;
    cache->o = o;
    cache->g = g;
    cache->c = c;
    cache->tanh_c = tanh_c;
  }
  return {std::move(h_t), std::move(c)};
}

LstmStepGrads lstm_cell_backward(const LstmCellParams& p, const LstmStepCache& k,
                                 const Vector& dh, const Vector& dc_in,
                                 LstmCellParams& grads) {
  const Eigen::Index h = p.hidden();
  const auto one = [](const Vector& v) { return (1.0 - v.array()).matrix(); };

  Vector d_o = dh.cwiseProduct(k.tanh_c);
  Vector dc = dc_in + dh.cwiseProduct(k.o).cwiseProduct(
                          (1.0 - k.tanh_c.array().square()).matrix());
  Vector d_f = dc.cwiseProduct(k.c_prev);
  Vector d_i = dc.cwiseProduct(k.g);
  Vector d_g = dc.cwiseProduct(k.i);

  Vector dz(4 * h);
  dz.segment(0, h) = d_i.cwiseProduct(k.i).cwiseProduct(one(k.i));
  dz.segment(h, h) = d_f.cwiseProduct(k.f).cwiseProduct(one(k.f));
  dz.segment(2 * h, h) = d_o.cwiseProduct(k.o).cwiseProduct(one(k.o));
  dz.segment(3 * h, h) = d_g.cwiseProduct((1.0 - k.g.array().square()).matrix());

  grads.w_input.noalias() += k.x * dz.transpose();
  grads.w_hidden.noalias() += k.h_prev * dz.transpose();
  grads.bias += dz;

  LstmStepGrads out;
  out.dx = p.w_input * dz;
  out.dh_prev = p.w_hidden * dz;
  out.dc_prev = dc.cwiseProduct(k.f);
  return out;
}

LstmStack::LstmStack(int input_dim, int hidden, int num_layers) {
  for (int l = 0; l < num_layers; ++l) layers.emplace_back(l == 0 ? input_dim : hidden, hidden);
}

void LstmStack::collect(ParamList& out, const std::string& prefix) {
  for (std::size_t l = 0; l < layers.size(); ++l)
    layers[l].collect(out, prefix + ".layer" + std::to_string(l));
}

Tensor2 lstm_stack_run(const LstmStack& stack, const Tensor2& inputs, bool reverse,
                       LstmRunCache* cache) {
  if (stack.layers.empty()) throw ShapeError("lstm_stack_run: no layers");
  const Eigen::Index T = inputs.rows();
  if (cache) {
    cache->reverse = reverse;
    cache->steps.assign(stack.layers.size(), std::vector<LstmStepCache>(static_cast<std::size_t>(T)));
  }
  Tensor2 current = inputs;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const auto& cell = stack.layers[l];
    Tensor2 out(T, cell.hidden());
    Vector h = Vector::Zero(cell.hidden());
    Vector c = Vector::Zero(cell.hidden());
    for (Eigen::Index s = 0; s < T; ++s) {
      const Eigen::Index t = reverse ? T - 1 - s : s;
      auto* step_cache = cache ? &cache->steps[l][static_cast<std::size_t>(t)] : nullptr;
      auto state = lstm_cell_step(cell, current.row(t).transpose(), h, c, step_cache);
      h = std::move(state.h);
      c = std::move(state.c);
      out.row(t) = h.transpose();
    }
    current = std::move(out);
  }
  return current;
}

Tensor2 lstm_stack_backward(const LstmStack& stack, const LstmRunCache& cache,
                            const Tensor2& d_outputs, LstmStack& grads) {
  const Eigen::Index T = d_outputs.rows();
  Tensor2 d_current = d_outputs;
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const auto& cell = stack.layers[li];
    Tensor2 d_in(T, cell.input_dim());
    Vector dh_next = Vector::Zero(cell.hidden());
    Vector dc_next = Vector::Zero(cell.hidden());
    // Visit positions in the reverse of processing order.
    for (Eigen::Index s = T; s-- > 0;) {
      const Eigen::Index t = cache.reverse ? T - 1 - s : s;
      Vector dh = d_current.row(t).transpose() + dh_next;
      auto g = lstm_cell_backward(cell, cache.steps[li][static_cast<std::size_t>(t)], dh,
                                  dc_next, grads.layers[li]);
      d_in.row(t) = g.dx.transpose();
      dh_next = std::move(g.dh_prev);
      dc_next = std::move(g.dc_prev);
    }
    d_current = std::move(d_in);
  }
  return d_current;
}

BiLstmParams::BiLstmParams(int input_dim, int hidden, int num_layers)
    : forward(input_dim, hidden, num_layers), backward(input_dim, hidden, num_layers) {}

void BiLstmParams::collect(ParamList& out, const std::string& prefix) {
  forward.collect(out, prefix + ".fwd");
  backward.collect(out, prefix + ".bwd");
}

Tensor2 bilstm_run(const BiLstmParams& params, const Tensor2& inputs, BiLstmCache* cache) {
  if (inputs.rows() == 0) throw ShapeError("bilstm_run: empty sequence");
  Tensor2 f = lstm_stack_run(params.forward, inputs, false, cache ? &cache->forward : nullptr);
  Tensor2 b = lstm_stack_run(params.backward, inputs, true, cache ? &cache->backward : nullptr);
  Tensor2 out(inputs.rows(), f.cols() + b.cols());
  out << f, b;
  return out;
}

Tensor2 bilstm_backward(const BiLstmParams& params, const BiLstmCache& cache,
                        const Tensor2& d_outputs, BiLstmParams& grads) {
  const auto hf = params.forward.hidden();
  const auto hb = params.backward.hidden();
  Tensor2 df = d_outputs.leftCols(hf);
  Tensor2 db = d_outputs.rightCols(hb);
  Tensor2 dx = lstm_stack_backward(params.forward, cache.forward, df, grads.forward);
  dx += lstm_stack_backward(params.backward, cache.backward, db, grads.backward);
  return dx;
}

}  // namespace qeforge::nn
