#include <benchmark/benchmark.h>

#include "qeforge/boosting.hpp"
#include "qeforge/predictor.hpp"
#include "qeforge/ridge.hpp"

using namespace qeforge;

namespace {

struct Fixture {
  corpus::Vocab source, target;
  predictor::EncodedPair pair;
  predictor::PredictorParams params;
};

Fixture make_fixture(int hidden) {
  std::vector<corpus::Tokens> src, tgt;
  corpus::Tokens s, t;
  for (int i = 0; i < 12; ++i) {
    s.push_back("s" + std::to_string(i));
    t.push_back("t" + std::to_string(i));
  }
  src.push_back(s);
  tgt.push_back(t);
  Fixture f{corpus::build_vocab(src), corpus::build_vocab(tgt), {}, {}};
  f.pair = predictor::encode_pair(s, t, f.source, f.target);
  predictor::PredictorShape shape;
  shape.source_vocab_size = f.source.size();
  shape.target_vocab_size = f.target.size();
  shape.hidden = hidden;
  shape.embedding_dim = hidden;
  f.params = predictor::PredictorParams(shape, f.source.fingerprint(), f.target.fingerprint());
  Rng rng(4);
  predictor::init_predictor(f.params, rng);
  return f;
}

void BM_QefvExtraction(benchmark::State& state) {
  const auto f = make_fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto q = predictor::extract_qefv(f.params, f.pair);
    benchmark::DoNotOptimize(q.vectors.data());
  }
}
BENCHMARK(BM_QefvExtraction)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void stacking_data(int n, nn::Tensor2& x, nn::Vector& y) {
  Rng rng(5);
  x.resize(n, 11);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    y(i) = uniform(rng, -1, 1);
    for (int c = 0; c < 11; ++c) x(i, c) = y(i) * 0.1 * c + uniform(rng, -1, 1);
  }
}

void BM_GbtFit(benchmark::State& state) {
  nn::Tensor2 x;
  nn::Vector y;
  stacking_data(static_cast<int>(state.range(0)), x, y);
  ensemble::GbtConfig cfg;
  for (auto _ : state) {
    auto m = ensemble::gbt_fit(x, y, cfg);
    benchmark::DoNotOptimize(m.trees.data());
  }
}
BENCHMARK(BM_GbtFit)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_RidgeFit(benchmark::State& state) {
  nn::Tensor2 x;
  nn::Vector y;
  stacking_data(static_cast<int>(state.range(0)), x, y);
  for (auto _ : state) {
    auto m = ensemble::ridge_fit(x, y, 0.5);
    benchmark::DoNotOptimize(m.weights.data());
  }
}
BENCHMARK(BM_RidgeFit)->Arg(500)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
