#include <benchmark/benchmark.h>

#include "qeforge/attention.hpp"
#include "qeforge/lstm.hpp"
#include "qeforge/rng.hpp"

using namespace qeforge;

namespace {

nn::Tensor2 random_matrix(int rows, int cols, Rng& rng) {
  nn::Tensor2 m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1, 1);
  return m;
}

void BM_LstmCellStep(benchmark::State& state) {
  const int h = static_cast<int>(state.range(0));
  Rng rng(1);
  nn::LstmCellParams cell(h, h);
  nn::ParamList params;
  cell.collect(params, "cell");
  nn::fill_uniform(params, rng);
  const nn::Vector x = random_matrix(h, 1, rng).col(0);
  nn::Vector hp = nn::Vector::Zero(h), cp = nn::Vector::Zero(h);
  for (auto _ : state) {
    auto s = nn::lstm_cell_step(cell, x, hp, cp);
    benchmark::DoNotOptimize(s.h.data());
  }
}
BENCHMARK(BM_LstmCellStep)->Arg(32)->Arg(128)->Arg(400);

void BM_LstmStackForwardBackward(benchmark::State& state) {
  const int h = static_cast<int>(state.range(0));
  Rng rng(2);
  nn::LstmStack stack(h, h, 2), grads(h, h, 2);
  nn::ParamList params;
  stack.collect(params, "lstm");
  nn::fill_uniform(params, rng);
  const nn::Tensor2 x = random_matrix(20, h, rng);
  const nn::Tensor2 d = random_matrix(20, h, rng);
  for (auto _ : state) {
    nn::LstmRunCache cache;
    nn::lstm_stack_run(stack, x, false, &cache);
    auto dx = nn::lstm_stack_backward(stack, cache, d, grads);
    benchmark::DoNotOptimize(dx.data());
  }
}
BENCHMARK(BM_LstmStackForwardBackward)->Arg(32)->Arg(128);

void BM_Attention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  const nn::Tensor2 q = random_matrix(n, 64, rng), k = random_matrix(n, 64, rng), v = random_matrix(n, 64, rng);
  for (auto _ : state) {
    auto out = nn::scaled_dot_attention(q, k, v);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Attention)->Arg(10)->Arg(50);

}  // namespace
