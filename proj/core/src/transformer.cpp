#include "qeforge/transformer.hpp"

#include <cmath>

#include "qeforge/error.hpp"

namespace qeforge::predictor {

namespace {

constexpr double kNormEps = 1e-5;

Tensor2 layer_norm(const LayerNormParams& p, const Tensor2& x, LayerNormCache& cache) {
  const auto n = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  Tensor2 y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const double var = centered.squaredNorm() / n;
    const double inv = 1.0 / std::sqrt(var + kNormEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
    y.row(r) = cache.normalized.row(r).cwiseProduct(p.gain.transpose()) + p.offset.transpose();
  }
  return y;
}

Tensor2 layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache,
                            const Tensor2& dy, LayerNormParams& g) {
  const auto n = static_cast<double>(dy.cols());
  g.gain += dy.cwiseProduct(cache.normalized).colwise().sum().transpose();
  g.offset += dy.colwise().sum().transpose();
  Tensor2 dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(p.gain.transpose());
    const auto xhat = cache.normalized.row(r);
    const double sum_d = dxhat.sum();
    const double sum_dx = dxhat.dot(xhat);
    dx.row(r) = (cache.inv_std(r) / n) *
                (n * dxhat.array() - sum_d - xhat.array() * sum_dx).matrix();
  }
  return dx;
}

Tensor2 multi_head(const MultiHeadParams& p, const Tensor2& query_in, const Tensor2& kv_in,
                   nn::AttentionMask mask, MultiHeadCache& cache) {
  const Eigen::Index dim = p.w_query.cols();
  const Eigen::Index dh = dim / p.heads;
  cache.query_in = query_in;
  cache.kv_in = kv_in;
  cache.q = query_in * p.w_query;
  cache.k = kv_in * p.w_key;
  cache.v = kv_in * p.w_value;
  cache.concat.resize(query_in.rows(), dim);
  cache.heads.resize(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    const Tensor2 qh = cache.q.middleCols(h * dh, dh);
    const Tensor2 kh = cache.k.middleCols(h * dh, dh);
    const Tensor2 vh = cache.v.middleCols(h * dh, dh);
    cache.concat.middleCols(h * dh, dh) =
        nn::scaled_dot_attention(qh, kh, vh, mask, &cache.heads[static_cast<std::size_t>(h)]);
  }
  Tensor2 out = cache.concat * p.w_out;
  out.rowwise() += p.b_out.transpose();
  return out;
}

// Returns d query_in; adds d kv_in into *d_kv.
Tensor2 multi_head_backward(const MultiHeadParams& p, const MultiHeadCache& cache,
                            const Tensor2& d_out, MultiHeadParams& g, Tensor2& d_kv) {
  const Eigen::Index dim = p.w_query.cols();
  const Eigen::Index dh = dim / p.heads;
  g.w_out.noalias() += cache.concat.transpose() * d_out;
  g.b_out += d_out.colwise().sum().transpose();
  const Tensor2 d_concat = d_out * p.w_out.transpose();
  Tensor2 dq(cache.q.rows(), dim), dk(cache.k.rows(), dim), dv(cache.v.rows(), dim);
  for (int h = 0; h < p.heads; ++h) {
    auto hg = nn::scaled_dot_attention_backward(cache.heads[static_cast<std::size_t>(h)],
                                                d_concat.middleCols(h * dh, dh));
    dq.middleCols(h * dh, dh) = hg.dq;
    dk.middleCols(h * dh, dh) = hg.dk;
    dv.middleCols(h * dh, dh) = hg.dv;
  }
  g.w_query.noalias() += cache.query_in.transpose() * dq;
  g.w_key.noalias() += cache.kv_in.transpose() * dk;
  g.w_value.noalias() += cache.kv_in.transpose() * dv;
  d_kv.noalias() += dk * p.w_key.transpose() + dv * p.w_value.transpose();
  return dq * p.w_query.transpose();
}

Tensor2 apply_dropout(const Tensor2& x, double rate, bool training, Rng& rng, Tensor2& mask) {
  auto r = nn::dropout(x, rate, training, rng);
  mask = std::move(r.mask);
  return std::move(r.output);
}

}  // namespace

LayerNormParams::LayerNormParams(int dim)
    : gain(Vector::Ones(dim)), offset(Vector::Zero(dim)) {}

void LayerNormParams::collect(nn::ParamList& out, const std::string& prefix) {
  out.push_back(nn::tensor_ref(prefix + ".gain", gain));
  out.push_back(nn::tensor_ref(prefix + ".offset", offset));
}

MultiHeadParams::MultiHeadParams(int dim, int num_heads)
    : w_query(Tensor2::Zero(dim, dim)),
      w_key(Tensor2::Zero(dim, dim)),
      w_value(Tensor2::Zero(dim, dim)),
      w_out(Tensor2::Zero(dim, dim)),
      b_out(Vector::Zero(dim)),
      heads(num_heads) {
  if (num_heads < 1 || dim % num_heads != 0)
    throw ShapeError("multi-head attention: dimension must be divisible by head count");
}

void MultiHeadParams::collect(nn::ParamList& out, const std::string& prefix) {
  out.push_back(nn::tensor_ref(prefix + ".w_query", w_query));
  out.push_back(nn::tensor_ref(prefix + ".w_key", w_key));
  out.push_back(nn::tensor_ref(prefix + ".w_value", w_value));
  out.push_back(nn::tensor_ref(prefix + ".w_out", w_out));
  out.push_back(nn::tensor_ref(prefix + ".b_out", b_out));
}

FeedForwardParams::FeedForwardParams(int dim, int hidden)
    : w1(Tensor2::Zero(dim, hidden)),
      b1(Vector::Zero(hidden)),
      w2(Tensor2::Zero(hidden, dim)),
      b2(Vector::Zero(dim)) {}

void FeedForwardParams::collect(nn::ParamList& out, const std::string& prefix) {
  out.push_back(nn::tensor_ref(prefix + ".w1", w1));
  out.push_back(nn::tensor_ref(prefix + ".b1", b1));
  out.push_back(nn::tensor_ref(prefix + ".w2", w2));
  out.push_back(nn::tensor_ref(prefix + ".b2", b2));
}

TransformerLayerParams::TransformerLayerParams(int dim, int heads, int ff_hidden, bool cross)
    : self_attention(dim, heads),
      cross_attention(cross ? MultiHeadParams(dim, heads) : MultiHeadParams()),
      feed_forward(dim, ff_hidden),
      norm_self(dim),
      norm_cross(cross ? LayerNormParams(dim) : LayerNormParams()),
      norm_ff(dim),
      has_cross(cross) {}

void TransformerLayerParams::collect(nn::ParamList& out, const std::string& prefix) {
  self_attention.collect(out, prefix + ".self_attn");
  norm_self.collect(out, prefix + ".norm_self");
  if (has_cross) {
    cross_attention.collect(out, prefix + ".cross_attn");
    norm_cross.collect(out, prefix + ".norm_cross");
  }
  feed_forward.collect(out, prefix + ".ffn");
  norm_ff.collect(out, prefix + ".norm_ff");
}

TransformerStack::TransformerStack(int dim, int heads, int ff_hidden, int num_layers, bool cross,
                                   nn::AttentionMask m)
    : mask(m) {
  for (int l = 0; l < num_layers; ++l) layers.emplace_back(dim, heads, ff_hidden, cross);
}

void TransformerStack::collect(nn::ParamList& out, const std::string& prefix) {
  for (std::size_t l = 0; l < layers.size(); ++l)
    layers[l].collect(out, prefix + ".layer" + std::to_string(l));
}

Tensor2 sinusoidal_positions(int length, int dim) {
  Tensor2 pe(length, dim);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

Tensor2 transformer_stack_run(const TransformerStack& stack, const Tensor2& x,
                              const Tensor2& memory, double rate, bool training, Rng& rng,
                              TransformerStackCache* cache) {
  if (x.rows() == 0) throw ShapeError("transformer: empty sequence");
  TransformerStackCache local;
  auto& c = cache ? *cache : local;
  c.layers.resize(stack.layers.size());
  Tensor2 h = x;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const auto& p = stack.layers[l];
    auto& lc = c.layers[l];

    Tensor2 a = multi_head(p.self_attention, h, h, stack.mask, lc.self_attention);
    a = apply_dropout(a, rate, training, rng, lc.self_mask);
    h = layer_norm(p.norm_self, h + a, lc.norm_self);

    if (p.has_cross) {
      if (memory.rows() == 0) throw ShapeError("transformer decoder: empty memory");
      Tensor2 m = multi_head(p.cross_attention, h, memory, nn::AttentionMask::kNone,
                             lc.cross_attention);
      m = apply_dropout(m, rate, training, rng, lc.cross_mask);
      h = layer_norm(p.norm_cross, h + m, lc.norm_cross);
    }

    lc.ff_input = h;
    Tensor2 pre = h * p.feed_forward.w1;
    pre.rowwise() += p.feed_forward.b1.transpose();
    lc.ff_hidden = pre.cwiseMax(0.0);
    Tensor2 f = lc.ff_hidden * p.feed_forward.w2;
    f.rowwise() += p.feed_forward.b2.transpose();
    f = apply_dropout(f, rate, training, rng, lc.ff_mask);
    h = layer_norm(p.norm_ff, h + f, lc.norm_ff);
  }
  return h;
}

Tensor2 transformer_stack_backward(const TransformerStack& stack,
                                   const TransformerStackCache& cache, const Tensor2& d_out,
                                   TransformerStack& grads, Tensor2* d_memory) {
  Tensor2 dh = d_out;
  for (std::size_t l = stack.layers.size(); l-- > 0;) {
    const auto& p = stack.layers[l];
    const auto& lc = cache.layers[l];
    auto& g = grads.layers[l];

    // feed-forward sublayer
    Tensor2 d_res = layer_norm_backward(p.norm_ff, lc.norm_ff, dh, g.norm_ff);
    Tensor2 df = d_res.cwiseProduct(lc.ff_mask);
    g.feed_forward.w2.noalias() += lc.ff_hidden.transpose() * df;
    g.feed_forward.b2 += df.colwise().sum().transpose();
    Tensor2 d_hidden = df * p.feed_forward.w2.transpose();
    d_hidden = d_hidden.cwiseProduct((lc.ff_hidden.array() > 0.0).cast<double>().matrix());
    g.feed_forward.w1.noalias() += lc.ff_input.transpose() * d_hidden;
    g.feed_forward.b1 += d_hidden.colwise().sum().transpose();
    dh = d_res + d_hidden * p.feed_forward.w1.transpose();

    if (p.has_cross) {
      d_res = layer_norm_backward(p.norm_cross, lc.norm_cross, dh, g.norm_cross);
      Tensor2 dm = d_res.cwiseProduct(lc.cross_mask);
      if (!d_memory) throw ShapeError("transformer decoder backward needs a memory gradient");
      dh = d_res + multi_head_backward(p.cross_attention, lc.cross_attention, dm,
                                       g.cross_attention, *d_memory);
    }

    d_res = layer_norm_backward(p.norm_self, lc.norm_self, dh, g.norm_self);
    Tensor2 da = d_res.cwiseProduct(lc.self_mask);
    Tensor2 d_kv = Tensor2::Zero(da.rows(), da.cols());
    Tensor2 d_q = multi_head_backward(p.self_attention, lc.self_attention, da,
                                      g.self_attention, d_kv);
    dh = d_res + d_q + d_kv;
  }
  return dh;
}

}  // namespace qeforge::predictor
