#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "qeforge/corpus.hpp"
#include "qeforge/gradcheck.hpp"
#include "qeforge/predictor.hpp"
#include "qeforge/rng.hpp"
#include "qeforge/tensor.hpp"

namespace qeforge::testing {

inline nn::Tensor2 random_matrix(int rows, int cols, Rng& rng, double bound = 1.0) {
  nn::Tensor2 m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
  return m;
}

inline nn::Vector random_vector(int n, Rng& rng, double bound = 1.0) {
  nn::Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform(rng, -bound, bound);
  return v;
}

// Scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("qeforge-" + tag + "-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct TinyTask {
  corpus::Vocab source;
  corpus::Vocab target;
  std::vector<predictor::EncodedPair> pairs;
};

// A handful of short sentence pairs over small vocabularies.
inline TinyTask tiny_task() {
  const std::vector<std::pair<corpus::Tokens, corpus::Tokens>> raw = {
      {{"a", "b", "c"}, {"x", "y", "z"}},
      {{"b", "c"}, {"y", "z"}},
      {{"c", "a", "d"}, {"z", "x", "w"}},
      {{"d", "d", "a", "b"}, {"w", "w", "x", "y"}},
  };
  std::vector<corpus::Tokens> src, tgt;
  for (const auto& [s, t] : raw) {
    src.push_back(s);
    tgt.push_back(t);
  }
  TinyTask task{corpus::build_vocab(src), corpus::build_vocab(tgt), {}};
  for (const auto& [s, t] : raw)
    task.pairs.push_back(predictor::encode_pair(s, t, task.source, task.target));
  return task;
}

inline predictor::PredictorShape tiny_shape(const TinyTask& task,
                                            predictor::Architecture arch = predictor::Architecture::kRnn) {
  predictor::PredictorShape s;
  s.architecture = arch;
  s.source_vocab_size = task.source.size();
  s.target_vocab_size = task.target.size();
  s.embedding_dim = arch == predictor::Architecture::kRnn ? 3 : 4;
  s.hidden = 4;
  s.layers = arch == predictor::Architecture::kRnn ? 2 : 1;
  s.heads = 2;
  s.ff_hidden = 6;
  return s;
}

inline predictor::PredictorParams tiny_predictor(const TinyTask& task, std::uint64_t seed,
                                                 predictor::Architecture arch = predictor::Architecture::kRnn,
                                                 double bound = 0.5) {
  predictor::PredictorParams p(tiny_shape(task, arch), task.source.fingerprint(), task.target.fingerprint());
  Rng rng(seed);
  predictor::init_predictor(p, rng);
  auto list = p.collect();
  // Larger weights than the default init make gradient checks less dominated
  // by near-zero entries.
  for (auto& t : list) {
    const bool norm = t.name.find("norm") != std::string::npos;
    if (!norm)
      for (double& v : t.values()) v *= bound / 0.1;
  }
  return p;
}

}  // namespace qeforge::testing
