#include "qeforge/predictor.hpp"

#include <cmath>

#include "qeforge/error.hpp"
#include "qeforge/losses.hpp"

namespace qeforge::predictor {

std::string to_string(Architecture a) {
  return a == Architecture::kRnn ? "rnn" : "transformer";
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kNce: return "nce";
    case LossKind::kNeg: return "neg";
  }
  return "ce";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "rnn") return Architecture::kRnn;
  if (s == "transformer") return Architecture::kTransformer;
  throw ConfigError("unknown architecture '" + s + "' (expected rnn|transformer)");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::kCrossEntropy;
  if (s == "nce") return LossKind::kNce;
  if (s == "neg") return LossKind::kNeg;
  throw ConfigError("unknown loss '" + s + "' (expected ce|nce|neg)");
}

PredictorShape PredictorShape::transformer_shape() {
  PredictorShape s;
  s.architecture = Architecture::kTransformer;
  s.layers = 6;
  s.heads = 4;
  s.embedding_dim = s.hidden;
  return s;
}

nlohmann::json PredictorShape::to_json() const {
  return {{"architecture", to_string(architecture)},
          {"source_vocab_size", source_vocab_size},
          {"target_vocab_size", target_vocab_size},
          {"embedding_dim", embedding_dim},
          {"hidden", hidden},
          {"layers", layers},
          {"heads", heads},
          {"ff_hidden", ff_hidden}};
}

PredictorShape PredictorShape::from_json(const nlohmann::json& j) {
  PredictorShape s;
  s.architecture = parse_architecture(j.at("architecture").get<std::string>());
  s.source_vocab_size = j.at("source_vocab_size").get<int>();
  s.target_vocab_size = j.at("target_vocab_size").get<int>();
  s.embedding_dim = j.at("embedding_dim").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.layers = j.at("layers").get<int>();
  s.heads = j.value("heads", 4);
  s.ff_hidden = j.value("ff_hidden", 0);
  return s;
}

void PredictorShape::validate() const {
  if (source_vocab_size < 5 || target_vocab_size < 5)
    throw ConfigError("predictor: vocabularies need at least one non-reserved token");
  if (hidden < 1 || layers < 1 || embedding_dim < 1)
    throw ConfigError("predictor: hidden, layers and embedding_dim must be positive");
  if (architecture == Architecture::kTransformer && (heads < 1 || hidden % heads != 0))
    throw ConfigError("predictor: hidden size must be divisible by the head count");
}

PredictorParams::PredictorParams(const PredictorShape& s, std::uint64_t src_fp,
                                 std::uint64_t tgt_fp)
    : shape(s), source_fingerprint(src_fp), target_fingerprint(tgt_fp) {
  shape.validate();
  const int in = shape.input_dim();
  const int d = shape.hidden;
  source_embedding = Tensor2::Zero(shape.source_vocab_size, in);
  target_embedding = Tensor2::Zero(shape.target_vocab_size, in);
  if (shape.architecture == Architecture::kRnn) {
    encoder_rnn = nn::BiLstmParams(in, d, shape.layers);
    forward_decoder_rnn = nn::LstmStack(in, d, shape.layers);
    backward_decoder_rnn = nn::LstmStack(in, d, shape.layers);
  } else {
    const int ff = shape.ff_hidden > 0 ? shape.ff_hidden : 4 * d;
    encoder_tf = TransformerStack(d, shape.heads, ff, shape.layers, false, nn::AttentionMask::kNone);
    forward_decoder_tf =
        TransformerStack(d, shape.heads, ff, shape.layers, true, nn::AttentionMask::kCausal);
    backward_decoder_tf =
        TransformerStack(d, shape.heads, ff, shape.layers, true, nn::AttentionMask::kAnticausal);
  }
  attention_query = Tensor2::Zero(shape.state_dim(), shape.encoder_dim());
  combiner_weight = Tensor2::Zero(shape.combiner_input_dim(), shape.state_dim());
  combiner_bias = Vector::Zero(shape.state_dim());
  output_projection = Tensor2::Zero(shape.state_dim(), shape.target_vocab_size);
}

nn::ParamList PredictorParams::collect() {
  nn::ParamList out;
  out.push_back(nn::tensor_ref(kSourceEmbeddingName, source_embedding));
  out.push_back(nn::tensor_ref(kTargetEmbeddingName, target_embedding));
  if (shape.architecture == Architecture::kRnn) {
    encoder_rnn.collect(out, "encoder");
    forward_decoder_rnn.collect(out, "forward_decoder");
    backward_decoder_rnn.collect(out, "backward_decoder");
  } else {
    encoder_tf.collect(out, "encoder");
    forward_decoder_tf.collect(out, "forward_decoder");
    backward_decoder_tf.collect(out, "backward_decoder");
  }
  out.push_back(nn::tensor_ref("attention.query", attention_query));
  out.push_back(nn::tensor_ref("combiner.weight", combiner_weight));
  out.push_back(nn::tensor_ref("combiner.bias", combiner_bias));
  out.push_back(nn::tensor_ref("output_projection", output_projection));
  return out;
}

PredictorParams PredictorParams::zeros_like() const {
  PredictorParams z(shape, source_fingerprint, target_fingerprint);
  nn::fill_zero(z.collect());
  return z;
}

void init_predictor(PredictorParams& params, Rng& rng) {
  auto list = params.collect();
  nn::fill_uniform(list, rng, 0.1);
  for (auto& t : list) {
    const auto& n = t.name;
    if (n.size() >= 5 && n.compare(n.size() - 5, 5, ".gain") == 0)
      for (double& v : t.values()) v = 1.0;
    else if (n.size() >= 7 && n.compare(n.size() - 7, 7, ".offset") == 0)
      for (double& v : t.values()) v = 0.0;
  }
}

EncodedPair encode_pair(const corpus::Tokens& source, const corpus::Tokens& target,
                        const corpus::Vocab& source_vocab, const corpus::Vocab& target_vocab) {
  return {corpus::encode(source, source_vocab), corpus::encode(target, target_vocab),
          source_vocab.fingerprint(), target_vocab.fingerprint()};
}

void check_vocab(const PredictorParams& params, const EncodedPair& pair) {
  if (pair.source_fingerprint != params.source_fingerprint ||
      pair.target_fingerprint != params.target_fingerprint)
    throw VocabMismatchError("pair was encoded with vocabularies the predictor was not built for");
}

namespace {

Tensor2 gather_rows(const Tensor2& table, const corpus::Ids& ids) {
  Tensor2 out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw ShapeError("token id out of vocabulary range");
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  return out;
}

void scatter_rows(Tensor2& table, const corpus::Ids& ids, const Tensor2& d) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    table.row(ids[i]) += d.row(static_cast<Eigen::Index>(i));
}

}  // namespace

PredictorForward predictor_forward(const PredictorParams& params, const EncodedPair& pair,
                                   const ForwardOptions& options) {
  check_vocab(params, pair);
  const auto& shape = params.shape;
  const int T = pair.target_length();
  if (T < 1) throw ShapeError("predictor: empty target sentence");
  if (pair.source.size() < 3) throw ShapeError("predictor: empty source sentence");

  const double rate = options.training ? options.dropout : 0.0;
  Rng fallback(0);
  if (rate > 0.0 && !options.rng) throw ConfigError("predictor: dropout needs an rng");
  Rng& rng = options.rng ? *options.rng : fallback;
  const bool tf = shape.architecture == Architecture::kTransformer;

  PredictorForward f;
  f.target_length = T;

  Tensor2 src = gather_rows(params.source_embedding, pair.source);
  Tensor2 tgt = gather_rows(params.target_embedding, pair.target);
  if (tf) {
    const double scale = std::sqrt(static_cast<double>(shape.hidden));
    src = src * scale + sinusoidal_positions(static_cast<int>(src.rows()), shape.hidden);
    tgt = tgt * scale + sinusoidal_positions(static_cast<int>(tgt.rows()), shape.hidden);
  }
  {
    auto d = nn::dropout(src, rate, options.training, rng);
    f.source_input = std::move(d.output);
    f.source_mask = std::move(d.mask);
    d = nn::dropout(tgt, rate, options.training, rng);
    f.target_input = std::move(d.output);
    f.target_mask = std::move(d.mask);
  }

  const Tensor2 left = f.target_input.topRows(T + 1);      // framed 0..T
  const Tensor2 right = f.target_input.bottomRows(T + 1);  // framed 1..T+1
  if (!tf) {
    f.encoder_out = nn::bilstm_run(params.encoder_rnn, f.source_input, &f.encoder_rnn_cache);
    f.forward_states = nn::lstm_stack_run(params.forward_decoder_rnn, left, false, &f.forward_rnn_cache);
    f.backward_states = nn::lstm_stack_run(params.backward_decoder_rnn, right, true, &f.backward_rnn_cache);
  } else {
    f.encoder_out = transformer_stack_run(params.encoder_tf, f.source_input, Tensor2(), rate,
                                          options.training, rng, &f.encoder_tf_cache);
    f.forward_states = transformer_stack_run(params.forward_decoder_tf, left, f.encoder_out, rate,
                                             options.training, rng, &f.forward_tf_cache);
    f.backward_states = transformer_stack_run(params.backward_decoder_tf, right, f.encoder_out, rate,
                                              options.training, rng, &f.backward_tf_cache);
  }

  const int d = shape.hidden;
  f.decoder_states.resize(T, 2 * d);
  f.decoder_states << f.forward_states.topRows(T), f.backward_states.bottomRows(T);

  f.query = f.decoder_states * params.attention_query;
  f.context = nn::scaled_dot_attention(f.query, f.encoder_out, f.encoder_out,
                                       nn::AttentionMask::kNone, &f.attention);

  f.combiner_input.resize(T, shape.combiner_input_dim());
  f.combiner_input << f.decoder_states, f.target_input.topRows(T), f.target_input.bottomRows(T),
      f.context;
  f.combined = nn::affine(f.combiner_input, params.combiner_weight, params.combiner_bias)
                   .array()
                   .tanh()
                   .matrix();
  auto drop = nn::dropout(f.combined, rate, options.training, rng);
  f.pre_projection = std::move(drop.output);
  f.combined_mask = std::move(drop.mask);
  return f;
}

void predictor_backward(const PredictorParams& params, const EncodedPair& pair,
                        const PredictorForward& f, const Tensor2& d_pre, PredictorParams& g) {
  const auto& shape = params.shape;
  const int T = f.target_length;
  const int d = shape.hidden;
  const int in = shape.input_dim();
  const int enc = shape.encoder_dim();
  const bool tf = shape.architecture == Architecture::kTransformer;

  // combiner
  Tensor2 d_combined = d_pre.cwiseProduct(f.combined_mask);
  Tensor2 d_z = d_combined.cwiseProduct((1.0 - f.combined.array().square()).matrix());
  auto aff = nn::affine_backward(f.combiner_input, params.combiner_weight, d_z);
  g.combiner_weight += aff.dw;
  g.combiner_bias += aff.db;

  Tensor2 d_states = aff.dx.leftCols(2 * d);
  Tensor2 d_target_input = Tensor2::Zero(f.target_input.rows(), in);
  d_target_input.topRows(T) += aff.dx.middleCols(2 * d, in);
  d_target_input.bottomRows(T) += aff.dx.middleCols(2 * d + in, in);
  const Tensor2 d_context = aff.dx.rightCols(enc);

  // attention over encoder states
  auto att = nn::scaled_dot_attention_backward(f.attention, d_context);
  Tensor2 d_encoder = att.dk + att.dv;
  g.attention_query.noalias() += f.decoder_states.transpose() * att.dq;
  d_states.noalias() += att.dq * params.attention_query.transpose();

  // decoders
  Tensor2 d_fwd = Tensor2::Zero(T + 1, d);
  Tensor2 d_bwd = Tensor2::Zero(T + 1, d);
  d_fwd.topRows(T) = d_states.leftCols(d);
  d_bwd.bottomRows(T) = d_states.rightCols(d);

  Tensor2 d_source_input;
  if (!tf) {
    d_target_input.topRows(T + 1) += nn::lstm_stack_backward(
        params.forward_decoder_rnn, f.forward_rnn_cache, d_fwd, g.forward_decoder_rnn);
    d_target_input.bottomRows(T + 1) += nn::lstm_stack_backward(
        params.backward_decoder_rnn, f.backward_rnn_cache, d_bwd, g.backward_decoder_rnn);
    d_source_input =
        nn::bilstm_backward(params.encoder_rnn, f.encoder_rnn_cache, d_encoder, g.encoder_rnn);
  } else {
    d_target_input.topRows(T + 1) += transformer_stack_backward(
        params.forward_decoder_tf, f.forward_tf_cache, d_fwd, g.forward_decoder_tf, &d_encoder);
    d_target_input.bottomRows(T + 1) += transformer_stack_backward(
        params.backward_decoder_tf, f.backward_tf_cache, d_bwd, g.backward_decoder_tf, &d_encoder);
    d_source_input = transformer_stack_backward(params.encoder_tf, f.encoder_tf_cache, d_encoder,
                                                g.encoder_tf, nullptr);
  }

  // embeddings
  Tensor2 d_src = d_source_input.cwiseProduct(f.source_mask);
  Tensor2 d_tgt = d_target_input.cwiseProduct(f.target_mask);
  if (tf) {
    const double scale = std::sqrt(static_cast<double>(shape.hidden));
    d_src *= scale;
    d_tgt *= scale;
  }
  scatter_rows(g.source_embedding, pair.source, d_src);
  scatter_rows(g.target_embedding, pair.target, d_tgt);
}

Vector predict_token_distribution(const PredictorParams& params, const EncodedPair& pair, int j) {
  const int T = pair.target_length();
  if (j < 1 || j > T) throw ShapeError("predict_token_distribution: position out of range");
  const auto f = predictor_forward(params, pair);
  const Vector logits = (f.pre_projection.row(j - 1) * params.output_projection).transpose();
  return nn::softmax(logits);
}

QEFVSequence extract_qefv(const PredictorParams& params, const EncodedPair& pair) {
  if (pair.target_length() < 1) throw ShapeError("extract_qefv: empty target sentence");
  const auto f = predictor_forward(params, pair);
  QEFVSequence out;
  out.vectors.resize(f.target_length, params.shape.state_dim());
  for (int j = 1; j <= f.target_length; ++j) {
    const int y = pair.target[static_cast<std::size_t>(j)];
    out.vectors.row(j - 1) =
        params.output_projection.col(y).transpose().cwiseProduct(f.pre_projection.row(j - 1));
  }
  return out;
}

PairLoss pair_loss(const PredictorParams& params, const EncodedPair& pair, LossKind kind,
                   std::span<const corpus::Ids> negatives,
                   const corpus::NoiseDistribution* noise, const ForwardOptions& options,
                   PredictorParams* grads, bool compute_accuracy) {
  const auto f = predictor_forward(params, pair, options);
  const int T = f.target_length;
  PairLoss out;
  out.positions = T;
  Tensor2 d_pre = Tensor2::Zero(T, params.shape.state_dim());

  if (kind == LossKind::kCrossEntropy || compute_accuracy) {
    const Tensor2 logits = f.pre_projection * params.output_projection;
    const Tensor2 probs = nn::softmax_rows(logits);
    for (int j = 1; j <= T; ++j) {
      const int y = pair.target[static_cast<std::size_t>(j)];
      Eigen::Index arg = 0;
      probs.row(j - 1).maxCoeff(&arg);
      if (arg == y) ++out.correct;
      if (kind != LossKind::kCrossEntropy) continue;
      auto r = ce_loss(probs.row(j - 1).transpose(), y);
      out.loss += r.loss;
      out.clamped += r.clamped ? 1 : 0;
      if (grads) {
        grads->output_projection.noalias() +=
            f.pre_projection.row(j - 1).transpose() * r.d_logits.transpose();
        d_pre.row(j - 1) = (params.output_projection * r.d_logits).transpose();
      }
    }
  }

  if (kind != LossKind::kCrossEntropy) {
    if (static_cast<int>(negatives.size()) < T)
      throw ConfigError("pair_loss: missing negative samples");
    if (kind == LossKind::kNce && !noise) throw ConfigError("pair_loss: NCE needs a noise distribution");
    for (int j = 1; j <= T; ++j) {
      const int y = pair.target[static_cast<std::size_t>(j)];
      const Vector state = f.pre_projection.row(j - 1).transpose();
      if (noise && noise->probability(y) <= 0.0) {
        ++out.skipped;
        continue;
      }
      const auto& negs = negatives[static_cast<std::size_t>(j - 1)];
      auto r = kind == LossKind::kNce ? nce_loss(state, params.output_projection, y, negs, *noise)
                                      : neg_loss(state, params.output_projection, y, negs);
      out.loss += r.loss;
      if (grads) {
        accumulate_columns(r, state, grads->output_projection);
        d_pre.row(j - 1) = r.d_state.transpose();
      }
    }
  }

  if (grads) predictor_backward(params, pair, f, d_pre, *grads);
  return out;
}

}  // namespace qeforge::predictor
