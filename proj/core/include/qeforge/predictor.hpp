#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/attention.hpp"
#include "qeforge/corpus.hpp"
#include "qeforge/lstm.hpp"
#include "qeforge/optim.hpp"
#include "qeforge/transformer.hpp"

namespace qeforge::predictor {

enum class Architecture { kRnn, kTransformer };
enum class LossKind { kCrossEntropy, kNce, kNeg };

std::string to_string(Architecture a);
std::string to_string(LossKind k);
Architecture parse_architecture(const std::string& s);
LossKind parse_loss_kind(const std::string& s);

/// Architecture hyperparameters. Defaults are the full-size RNN predictor
/// (two LSTM layers, hidden 400); see transformer_shape() for the transformer.
struct PredictorShape {
  Architecture architecture = Architecture::kRnn;
  int source_vocab_size = 0;
  int target_vocab_size = 0;
  int embedding_dim = 200;  // transformer: forced to `hidden`
  int hidden = 400;         // d; decoder states are 2d wide once concatenated
  int layers = 2;           // per LSTM stack / per transformer stack
  int heads = 4;            // transformer only
  int ff_hidden = 0;        // transformer only; 0 means 4 * hidden

  static PredictorShape transformer_shape();

  int state_dim() const noexcept { return 2 * hidden; }
  int encoder_dim() const noexcept {
    return architecture == Architecture::kRnn ? 2 * hidden : hidden;
  }
  int input_dim() const noexcept {
    return architecture == Architecture::kRnn ? embedding_dim : hidden;
  }
  int combiner_input_dim() const noexcept {
    return state_dim() + 2 * input_dim() + encoder_dim();
  }

  nlohmann::json to_json() const;
  static PredictorShape from_json(const nlohmann::json& j);
  void validate() const;
};

inline constexpr const char* kSourceEmbeddingName = "source_embedding";
inline constexpr const char* kTargetEmbeddingName = "target_embedding";

/// All predictor weights. Only the members of the selected architecture are
/// allocated; the rest stay empty.
struct PredictorParams {
  PredictorShape shape;
  std::uint64_t source_fingerprint = 0;
  std::uint64_t target_fingerprint = 0;

  Tensor2 source_embedding;  // K_x x input_dim
  Tensor2 target_embedding;  // K_y x input_dim

  nn::BiLstmParams encoder_rnn;
  nn::LstmStack forward_decoder_rnn;
  nn::LstmStack backward_decoder_rnn;

  TransformerStack encoder_tf;
  TransformerStack forward_decoder_tf;
  TransformerStack backward_decoder_tf;

  Tensor2 attention_query;    // state_dim x encoder_dim
  Tensor2 combiner_weight;    // combiner_input_dim x state_dim
  Vector combiner_bias;       // state_dim
  Tensor2 output_projection;  // W: state_dim x K_y

  PredictorParams() = default;
  /// Parameters for `shape`: zeros, except layer-norm gains which start at 1.
  PredictorParams(const PredictorShape& shape, std::uint64_t source_fingerprint,
                  std::uint64_t target_fingerprint);

  nn::ParamList collect();
  /// Same shapes, all zeros.
  PredictorParams zeros_like() const;
};

/// Uniform [-0.1, 0.1] for every weight; layer-norm gains 1 and offsets 0.
void init_predictor(PredictorParams& params, Rng& rng);

/// A source/target pair encoded with BOS/EOS framing plus the fingerprints of
/// the vocabularies used.
struct EncodedPair {
  corpus::Ids source;
  corpus::Ids target;
  std::uint64_t source_fingerprint = 0;
  std::uint64_t target_fingerprint = 0;

  int target_length() const noexcept { return static_cast<int>(target.size()) - 2; }
};

EncodedPair encode_pair(const corpus::Tokens& source, const corpus::Tokens& target,
                        const corpus::Vocab& source_vocab, const corpus::Vocab& target_vocab);

/// Throws VocabMismatchError when the pair was encoded with other vocabularies.
void check_vocab(const PredictorParams& params, const EncodedPair& pair);

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

/// Activations of one forward pass, kept for backward.
struct PredictorForward {
  int target_length = 0;
  Tensor2 source_input, source_mask;  // embedded source after dropout
  Tensor2 target_input, target_mask;  // embedded framed target after dropout
  Tensor2 encoder_out;
  nn::BiLstmCache encoder_rnn_cache;
  nn::LstmRunCache forward_rnn_cache, backward_rnn_cache;
  TransformerStackCache encoder_tf_cache, forward_tf_cache, backward_tf_cache;
  Tensor2 forward_states;   // T+1 rows: state after consuming framed position p
  Tensor2 backward_states;  // T+1 rows: row r is the state at framed position r+1
  Tensor2 decoder_states;   // T x 2d, row j-1 is [fwd_{j-1} ; bwd_{j+1}]
  Tensor2 query;
  nn::AttentionCache attention;
  Tensor2 context;          // T x encoder_dim
  Tensor2 combiner_input;
  Tensor2 combined;         // tanh output, T x 2d
  Tensor2 combined_mask;
  Tensor2 pre_projection;   // combined after dropout; logits = pre_projection * W
};

PredictorForward predictor_forward(const PredictorParams& params, const EncodedPair& pair,
                                   const ForwardOptions& options = {});

/// Backpropagates dL/d(pre_projection) through the whole network, adding into
/// `grads`. Output-projection gradients are the caller's responsibility.
void predictor_backward(const PredictorParams& params, const EncodedPair& pair,
                        const PredictorForward& fwd, const Tensor2& d_pre_projection,
                        PredictorParams& grads);

/// Distribution over the target vocabulary for position j (1-based over the
/// unframed target).
Vector predict_token_distribution(const PredictorParams& params, const EncodedPair& pair, int j);

/// Per-position feature vectors: row j-1 is W[:, y_j] (elementwise) times the
/// pre-projection state at j. Inference mode.
struct QEFVSequence {
  Tensor2 vectors;  // T_y x 2d

  int length() const noexcept { return static_cast<int>(vectors.rows()); }
  int dim() const noexcept { return static_cast<int>(vectors.cols()); }
};

QEFVSequence extract_qefv(const PredictorParams& params, const EncodedPair& pair);

/// Per-position losses for one pair. `negatives[j-1]` supplies the samples
/// for sampled losses (ignored for cross-entropy).
struct PairLoss {
  double loss = 0.0;
  int positions = 0;
  int correct = 0;   // argmax hits; filled only when full logits are computed
  int clamped = 0;
  int skipped = 0;   // positions whose target has no noise mass (sampled losses)
};

PairLoss pair_loss(const PredictorParams& params, const EncodedPair& pair, LossKind kind,
                   std::span<const corpus::Ids> negatives,
                   const corpus::NoiseDistribution* noise, const ForwardOptions& options,
                   PredictorParams* grads, bool compute_accuracy = false);

}  // namespace qeforge::predictor
