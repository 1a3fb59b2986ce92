#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qeforge/corpus.hpp"

namespace qeforge::synthetic {

// Toy translation task: every language has a fixed lexicon, each pair maps
// source words to target words through a substitution cipher in monotone
// order, and QE targets are clean translations with a share of their tokens
// replaced by random target words. The gold score is the fraction of intact
// tokens, z-standardized per pair and split.

struct PairSpec {
  std::string source_lang;
  std::string target_lang;
  bool low_resource = false;

  std::string name() const { return source_lang + "-" + target_lang; }
};

/// en-de and en-zh low resource; ro-en, et-en, ne-en high resource.
std::vector<PairSpec> default_pairs();

struct SyntheticConfig {
  int lexicon_size = 40;
  int min_length = 4;
  int max_length = 10;
  double zipf_exponent = 0.8;
  double max_corruption = 0.7;
  int parallel_low = 100;
  int parallel_high = 700;
  int augmentation = 500;  // extra parallel pairs for low-resource pairs
  int qe_train_low = 100;
  int qe_train_high = 700;
  int qe_valid = 100;
  int qe_test = 100;

  nlohmann::json to_json() const;
  static SyntheticConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct PairData {
  PairSpec spec;
  std::vector<corpus::ParallelPair> parallel;
  std::vector<corpus::ParallelPair> augmentation;  // empty for high-resource pairs
  std::vector<corpus::QESample> qe_train;
  std::vector<corpus::QESample> qe_valid;
  std::vector<corpus::QESample> qe_test;
};

struct Benchmark {
  std::vector<PairData> pairs;

  const PairData& pair(const std::string& name) const;
};

/// Lexicon of `size` distinct pseudo-words for a language.
std::vector<std::string> make_lexicon(const std::string& lang, int size, std::uint64_t seed);

/// Generator for one language pair. Deterministic given (seed, pair).
class PairGenerator {
 public:
  PairGenerator(const PairSpec& spec, const SyntheticConfig& config, std::uint64_t seed);

  /// Clean pairs. The first sentences walk the whole source lexicon so every
  /// word (and its translation) occurs at least once.
  std::vector<corpus::ParallelPair> parallel(int n, Rng& rng) const;
  /// Corrupted translations with z-standardized scores.
  std::vector<corpus::QESample> qe(int n, Rng& rng) const;

  const std::vector<std::string>& source_lexicon() const noexcept { return source_; }
  const std::vector<std::string>& target_lexicon() const noexcept { return target_; }
  std::string translate(const std::string& source_word) const;

 private:
  corpus::Tokens sample_sentence(Rng& rng) const;

  PairSpec spec_;
  SyntheticConfig config_;
  std::vector<std::string> source_;
  std::vector<std::string> target_;
  std::vector<int> cipher_;  // source index -> target index
  std::vector<double> cumulative_;
};

Benchmark generate(const SyntheticConfig& config, std::uint64_t seed,
                   const std::vector<PairSpec>& pairs = default_pairs());

/// Writes <dir>/<pair>/{parallel,augment,train,valid,test}.tsv.
void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir);
Benchmark load_benchmark(const std::filesystem::path& dir,
                         const std::vector<PairSpec>& pairs = default_pairs());

}  // namespace qeforge::synthetic
