#include "qeforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "qeforge/error.hpp"

namespace qeforge::synthetic {

std::vector<PairSpec> default_pairs() {
  return {{"en", "de", true}, {"en", "zh", true}, {"ro", "en", false},
          {"et", "en", false}, {"ne", "en", false}};
}

nlohmann::json SyntheticConfig::to_json() const {
  return {{"lexicon_size", lexicon_size},   {"min_length", min_length},
          {"max_length", max_length},       {"zipf_exponent", zipf_exponent},
          {"max_corruption", max_corruption}, {"parallel_low", parallel_low},
          {"parallel_high", parallel_high}, {"augmentation", augmentation},
          {"qe_train_low", qe_train_low},   {"qe_train_high", qe_train_high},
          {"qe_valid", qe_valid},           {"qe_test", qe_test}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.lexicon_size = j.value("lexicon_size", c.lexicon_size);
  c.min_length = j.value("min_length", c.min_length);
  c.max_length = j.value("max_length", c.max_length);
  c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
  c.max_corruption = j.value("max_corruption", c.max_corruption);
  c.parallel_low = j.value("parallel_low", c.parallel_low);
  c.parallel_high = j.value("parallel_high", c.parallel_high);
  c.augmentation = j.value("augmentation", c.augmentation);
  c.qe_train_low = j.value("qe_train_low", c.qe_train_low);
  c.qe_train_high = j.value("qe_train_high", c.qe_train_high);
  c.qe_valid = j.value("qe_valid", c.qe_valid);
  c.qe_test = j.value("qe_test", c.qe_test);
  return c;
}

void SyntheticConfig::validate() const {
  if (lexicon_size < 2) throw ConfigError("synthetic: lexicon_size must be >= 2");
  if (min_length < 1 || max_length < min_length)
    throw ConfigError("synthetic: need 1 <= min_length <= max_length");
  if (!(max_corruption >= 0.0 && max_corruption <= 1.0))
    throw ConfigError("synthetic: max_corruption must be in [0, 1]");
  for (int n : {parallel_low, parallel_high, qe_train_low, qe_train_high, qe_valid, qe_test})
    if (n < 2) throw ConfigError("synthetic: every corpus needs at least two sentences");
  if (augmentation < 0) throw ConfigError("synthetic: augmentation must be >= 0");
}

const PairData& Benchmark::pair(const std::string& name) const {
  for (const auto& p : pairs)
    if (p.spec.name() == name) return p;
  throw ConfigError("benchmark has no language pair '" + name + "'");
}

std::vector<std::string> make_lexicon(const std::string& lang, int size, std::uint64_t seed) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                            "s", "t", "v", "z", "ch", "sh", "tr", "kl"};
  static constexpr const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
  Rng rng(derive_seed(seed, "lexicon:" + lang));
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < size) {
    const int syllables = 2 + static_cast<int>(uniform_index(rng, 2));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += kOnsets[uniform_index(rng, std::size(kOnsets))];
      w += kNuclei[uniform_index(rng, std::size(kNuclei))];
    }
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

PairGenerator::PairGenerator(const PairSpec& spec, const SyntheticConfig& config, std::uint64_t seed)
    : spec_(spec), config_(config) {
  config_.validate();
  source_ = make_lexicon(spec.source_lang, config.lexicon_size, seed);
  target_ = make_lexicon(spec.target_lang, config.lexicon_size, seed);
  cipher_.resize(source_.size());
  std::iota(cipher_.begin(), cipher_.end(), 0);
  Rng rng(derive_seed(seed, "cipher:" + spec.name()));
  qeforge::shuffle(cipher_.begin(), cipher_.end(), rng);
  double total = 0.0;
  for (std::size_t r = 0; r < source_.size(); ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), config.zipf_exponent);
    cumulative_.push_back(total);
  }
  for (auto& c : cumulative_) c /= total;
}

std::string PairGenerator::translate(const std::string& source_word) const {
  const auto it = std::find(source_.begin(), source_.end(), source_word);
  if (it == source_.end()) throw ConfigError("'" + source_word + "' is not in the source lexicon");
  return target_[static_cast<std::size_t>(cipher_[static_cast<std::size_t>(it - source_.begin())])];
}

corpus::Tokens PairGenerator::sample_sentence(Rng& rng) const {
  const auto span = static_cast<std::uint64_t>(config_.max_length - config_.min_length + 1);
  const int len = config_.min_length + static_cast<int>(uniform_index(rng, span));
  corpus::Tokens out;
  for (int i = 0; i < len; ++i) {
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto r = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                         source_.size() - 1);
    out.push_back(source_[r]);
  }
  return out;
}

std::vector<corpus::ParallelPair> PairGenerator::parallel(int n, Rng& rng) const {
  std::vector<corpus::ParallelPair> out;
  std::vector<std::size_t> walk(source_.size());
  std::iota(walk.begin(), walk.end(), std::size_t{0});
  qeforge::shuffle(walk.begin(), walk.end(), rng);
  std::size_t pos = 0;
  for (int i = 0; i < n; ++i) {
    corpus::ParallelPair p;
    p.source_tokens = sample_sentence(rng);
    for (auto& tok : p.source_tokens) {
      if (pos < walk.size()) tok = source_[walk[pos++]];
    }
    for (const auto& tok : p.source_tokens) p.target_tokens.push_back(translate(tok));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<corpus::QESample> PairGenerator::qe(int n, Rng& rng) const {
  std::vector<corpus::QESample> out;
  std::vector<double> raw;
  for (int i = 0; i < n; ++i) {
    corpus::QESample s;
    s.language_pair = spec_.name();
    s.source_tokens = sample_sentence(rng);
    const double rate = uniform(rng, 0.0, config_.max_corruption);
    int intact = 0;
    for (const auto& tok : s.source_tokens) {
      const auto clean = translate(tok);
      if (uniform01(rng) < rate) {
        std::string wrong = clean;
        while (wrong == clean) wrong = target_[uniform_index(rng, target_.size())];
        s.target_tokens.push_back(wrong);
      } else {
        s.target_tokens.push_back(clean);
        ++intact;
      }
    }
    raw.push_back(static_cast<double>(intact) / static_cast<double>(s.target_tokens.size()));
    out.push_back(std::move(s));
  }
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double r : raw) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].score = sd > 0.0 ? (raw[i] - mean) / sd : 0.0;
  return out;
}

Benchmark generate(const SyntheticConfig& config, std::uint64_t seed, const std::vector<PairSpec>& pairs) {
  config.validate();
  Benchmark b;
  for (const auto& spec : pairs) {
    PairGenerator gen(spec, config, seed);
    Rng rng(derive_seed(seed, "data:" + spec.name()));
    PairData d;
    d.spec = spec;
    d.parallel = gen.parallel(spec.low_resource ? config.parallel_low : config.parallel_high, rng);
    if (spec.low_resource && config.augmentation > 0) d.augmentation = gen.parallel(config.augmentation, rng);
    d.qe_train = gen.qe(spec.low_resource ? config.qe_train_low : config.qe_train_high, rng);
    d.qe_valid = gen.qe(config.qe_valid, rng);
    d.qe_test = gen.qe(config.qe_test, rng);
    b.pairs.push_back(std::move(d));
  }
  return b;
}

void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  for (const auto& p : bench.pairs) {
    const auto d = dir / p.spec.name();
    std::filesystem::create_directories(d);
    corpus::write_parallel(d / "parallel.tsv", p.parallel);
    if (!p.augmentation.empty()) corpus::write_parallel(d / "augment.tsv", p.augmentation);
    corpus::write_qe_dataset(d / "train.tsv", p.qe_train);
    corpus::write_qe_dataset(d / "valid.tsv", p.qe_valid);
    corpus::write_qe_dataset(d / "test.tsv", p.qe_test);
  }
}

Benchmark load_benchmark(const std::filesystem::path& dir, const std::vector<PairSpec>& pairs) {
  Benchmark b;
  for (const auto& spec : pairs) {
    const auto d = dir / spec.name();
    if (!std::filesystem::is_directory(d))
      throw ConfigError(fmt::format("missing data directory {}", d.string()));
    PairData p;
    p.spec = spec;
    p.parallel = corpus::load_parallel(d / "parallel.tsv");
    if (std::filesystem::exists(d / "augment.tsv")) p.augmentation = corpus::load_parallel(d / "augment.tsv");
    p.qe_train = corpus::load_qe_dataset(d / "train.tsv", spec.name());
    p.qe_valid = corpus::load_qe_dataset(d / "valid.tsv", spec.name());
    p.qe_test = corpus::load_qe_dataset(d / "test.tsv", spec.name());
    b.pairs.push_back(std::move(p));
  }
  return b;
}

}  // namespace qeforge::synthetic
