#include "qeforge/corpus.hpp"

#include <cctype>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "qeforge/error.hpp"

namespace qeforge::corpus {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

// Reads all lines, stripping a trailing CR. A final LF does not produce an
// extra empty record.
std::vector<std::string> read_lines(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string join(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<QESample> load_qe_dataset(const std::filesystem::path& path,
                                      const std::string& pair) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw ParseError(path.string(), 0, "empty QE file");
  std::vector<QESample> samples;
  samples.reserve(lines.size());
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto fields = split_tabs(lines[n]);
    if (fields.size() != 3) {
      throw ParseError(path.string(), n + 1,
                       fmt::format("expected 3 tab-separated fields, got {}", fields.size()));
    }
    QESample s;
    s.source_tokens = tokenize(fields[0]);
    s.target_tokens = tokenize(fields[1]);
    if (s.source_tokens.empty() || s.target_tokens.empty())
      throw ParseError(path.string(), n + 1, "empty source or target");
    const auto score_text = fields[2];
    const auto* first = score_text.data();
    const auto* last = first + score_text.size();
    const auto [ptr, ec] = std::from_chars(first, last, s.score);
    if (ec != std::errc{} || ptr != last || !std::isfinite(s.score))
      throw ParseError(path.string(), n + 1,
                       fmt::format("score '{}' is not a finite number", score_text));
    s.language_pair = pair;
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_qe_dataset(const std::filesystem::path& path,
                      std::span<const QESample> samples) {
  auto out = open_output(path);
  for (const auto& s : samples)
    out << join(s.source_tokens) << '\t' << join(s.target_tokens) << '\t'
        << fmt::format("{:.17g}", s.score) << '\n';
}

std::vector<ParallelPair> load_parallel(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<ParallelPair> pairs;
  pairs.reserve(lines.size());
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto fields = split_tabs(lines[n]);
    if (fields.size() != 2)
      throw ParseError(path.string(), n + 1,
                       fmt::format("expected 2 tab-separated fields, got {}", fields.size()));
    ParallelPair p{tokenize(fields[0]), tokenize(fields[1])};
    if (p.source_tokens.empty() || p.target_tokens.empty())
      throw ParseError(path.string(), n + 1, "empty source or target");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_parallel(const std::filesystem::path& path,
                    std::span<const ParallelPair> pairs) {
  auto out = open_output(path);
  for (const auto& p : pairs)
    out << join(p.source_tokens) << '\t' << join(p.target_tokens) << '\n';
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  add("<pad>", 0);
  add("<unk>", 0);
  add("<s>", 0);
  add("</s>", 0);
}

void Vocab::add(std::string token, std::uint64_t freq) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
  freqs_.push_back(freq);
}

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocab::token(int id) const {
  return tokens_.at(static_cast<std::size_t>(id));
}

std::uint64_t Vocab::frequency(int id) const {
  return freqs_.at(static_cast<std::size_t>(id));
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = fnv1a("qeforge-vocab");
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

void Vocab::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << freqs_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.size() < kNumReserved)
    throw ParseError(path.string(), 0, "vocab file lacks reserved tokens");
  Vocab v;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto fields = split_tabs(lines[n]);
    if (fields.size() != 2)
      throw ParseError(path.string(), n + 1, "expected token<TAB>frequency");
    std::uint64_t freq = 0;
    const auto f = fields[1];
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), freq);
    if (ec != std::errc{} || ptr != f.data() + f.size())
      throw ParseError(path.string(), n + 1, "bad frequency");
    if (n < kNumReserved) {
      if (fields[0] != v.tokens_[n])
        throw ParseError(path.string(), n + 1, "reserved token out of place");
      v.freqs_[n] = freq;
    } else {
      if (v.contains(fields[0]))
        throw ParseError(path.string(), n + 1, "duplicate token");
      v.add(std::string(fields[0]), freq);
    }
  }
  return v;
}

Vocab build_vocab(std::span<const Tokens> corpora, std::uint64_t min_freq,
                  int max_size) {
  if (max_size < Vocab::kNumReserved)
    throw ConfigError("max_size must leave room for the 4 reserved tokens");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& seq : corpora)
    for (const auto& t : seq) ++counts[t];

  Vocab reserved;
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (auto& [tok, c] : counts)
    if (c >= min_freq && !reserved.contains(tok)) entries.emplace_back(tok, c);
  // std::map iteration is already lexicographic, so a stable sort on
  // frequency keeps ties in lexicographic order.
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  const auto room = static_cast<std::size_t>(max_size - Vocab::kNumReserved);
  for (std::size_t i = 0; i < entries.size() && i < room; ++i)
    v.add(entries[i].first, entries[i].second);
  return v;
}

Ids encode(const Tokens& tokens, const Vocab& vocab) {
  Ids ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(Vocab::kBos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(Vocab::kEos);
  return ids;
}

Tokens decode(const Ids& ids, const Vocab& vocab) {
  Tokens out;
  for (int id : ids) {
    if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Noise distribution

NoiseDistribution::NoiseDistribution(std::vector<double> weights)
    : weights_(std::move(weights)) {
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw NumericError("noise weights must be finite and non-negative");
    total += w;
  }
  if (total <= 0.0) throw NumericError("noise distribution has no mass");
  probs_.resize(weights_.size());
  cumulative_.resize(weights_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    probs_[i] = weights_[i] / total;
    acc += probs_[i];
    cumulative_[i] = acc;
  }
}

int NoiseDistribution::sample(Rng& rng) const {
  const double u = uniform01(rng) * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  auto idx = static_cast<std::size_t>(it - cumulative_.begin());
  // Skip zero-mass ids that share a cumulative value with their predecessor.
  while (probs_[idx] == 0.0 && idx + 1 < probs_.size()) ++idx;
  return static_cast<int>(idx);
}

NoiseDistribution noise_distribution(const Vocab& vocab, double exponent) {
  std::vector<double> w(static_cast<std::size_t>(vocab.size()), 0.0);
  bool any = false;
  for (int id = Vocab::kNumReserved; id < vocab.size(); ++id) {
    const auto f = vocab.frequency(id);
    if (f == 0) continue;
    w[static_cast<std::size_t>(id)] = std::pow(static_cast<double>(f), exponent);
    any = true;
  }
  if (!any) throw NumericError("noise distribution: all token frequencies are zero");
  return NoiseDistribution(std::move(w));
}

Ids sample_negatives(const NoiseDistribution& dist, int k,
                     std::optional<int> exclude, Rng& rng) {
  if (k < 1) throw ConfigError("sample_negatives: k must be >= 1");
  if (exclude && *exclude >= 0 && *exclude < dist.size() &&
      dist.probability(*exclude) >= 1.0)
    throw NumericError("sample_negatives: only the excluded token has noise mass");
  Ids out;
  out.reserve(static_cast<std::size_t>(k));
  long budget = 100L * k;
  while (static_cast<int>(out.size()) < k) {
    const int id = dist.sample(rng);
    if (exclude && id == *exclude) {
      if (--budget < 0)
        throw NumericError("sample_negatives: resample budget exhausted");
      continue;
    }
    out.push_back(id);
  }
  return out;
}

}  // namespace qeforge::corpus
