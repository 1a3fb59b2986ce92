#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qeforge/rng.hpp"

namespace qeforge::corpus {

using Tokens = std::vector<std::string>;
using Ids = std::vector<int>;

/// One translation instance with its z-standardized direct-assessment score.
struct QESample {
  Tokens source_tokens;
  Tokens target_tokens;
  double score = 0.0;
  std::string language_pair;
};

struct ParallelPair {
  Tokens source_tokens;
  Tokens target_tokens;
};

/// Lowercase (ASCII) and split on whitespace.
Tokens tokenize(std::string_view text);

/// Reads `source<TAB>target<TAB>score` records. Throws ParseError naming the
/// offending line for wrong field counts, empty sides or non-numeric scores,
/// and for an empty file.
std::vector<QESample> load_qe_dataset(const std::filesystem::path& path,
                                      const std::string& pair);
void write_qe_dataset(const std::filesystem::path& path,
                      std::span<const QESample> samples);

std::vector<ParallelPair> load_parallel(const std::filesystem::path& path);
void write_parallel(const std::filesystem::path& path,
                    std::span<const ParallelPair> pairs);

/// Dense token <-> id mapping with per-id frequencies. Ids 0..3 are reserved.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumReserved = 4;

  Vocab();

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::uint64_t frequency(int id) const;
  static bool is_reserved(int id) noexcept { return id >= 0 && id < kNumReserved; }

  /// Content hash over tokens in id order.
  std::uint64_t fingerprint() const;

  /// `token<TAB>frequency` per line in id order.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.freqs_ == b.freqs_;
  }

 private:
  friend Vocab build_vocab(std::span<const Tokens>, std::uint64_t, int);
  void add(std::string token, std::uint64_t freq);

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, int> index_;
};

/// Tokens with frequency >= min_freq, most frequent first (ties broken
/// lexicographically), truncated so the vocabulary holds at most max_size ids.
Vocab build_vocab(std::span<const Tokens> corpora, std::uint64_t min_freq = 1,
                  int max_size = 10000);

/// Maps tokens to ids with BOS/EOS framing; unknown tokens become UNK.
Ids encode(const Tokens& tokens, const Vocab& vocab);
/// Inverse of encode: drops framing ids and maps the rest back to tokens.
Tokens decode(const Ids& ids, const Vocab& vocab);

/// Frequency-proportional noise distribution Q(w) over non-reserved ids.
class NoiseDistribution {
 public:
  NoiseDistribution() = default;
  NoiseDistribution(std::vector<double> weights);

  int size() const noexcept { return static_cast<int>(probs_.size()); }
  double probability(int id) const { return probs_.at(static_cast<std::size_t>(id)); }
  std::span<const double> probabilities() const noexcept { return probs_; }
  std::span<const double> weights() const noexcept { return weights_; }

  int sample(Rng& rng) const;

 private:
  std::vector<double> weights_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

/// Q(w) proportional to frequency(w)^exponent; reserved ids get zero mass.
/// Throws when no non-reserved token has positive frequency.
NoiseDistribution noise_distribution(const Vocab& vocab, double exponent = 1.0);

/// Draws k ids i.i.d. from Q, resampling any draw equal to `exclude`. Gives up
/// after 100*k resamples.
Ids sample_negatives(const NoiseDistribution& dist, int k,
                     std::optional<int> exclude, Rng& rng);

}  // namespace qeforge::corpus
