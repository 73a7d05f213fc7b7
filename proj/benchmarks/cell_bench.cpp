// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "slstm/grad.hpp"
#include "slstm/rng.hpp"

namespace {

using slstm::Index;
using slstm::Matrix;
using slstm::VariantKind;

constexpr Index kBatch = 32;
constexpr Index kSteps = 28;

std::vector<Matrix<float>> random_sequence(std::uint64_t seed) {
  slstm::Rng rng(seed);
  std::vector<Matrix<float>> xs;
  for (Index t = 0; t < kSteps; ++t) {
    Matrix<float> x(kBatch, 28);
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = static_cast<float>(rng.uniform());
    xs.push_back(std::move(x));
  }
  return xs;
}

VariantKind variant_arg(const benchmark::State& state) {
  return slstm::kAllVariants[static_cast<std::size_t>(state.range(0))];
}

void BM_CellStep(benchmark::State& state) {
  const auto kind = variant_arg(state);
  const auto net = slstm::init_network<float>(kind, {}, 1);
  const auto xs = random_sequence(2);
  auto s = slstm::CellState<float>::zeros(kBatch, 100);
  for (auto _ : state) {
    auto step = slstm::cell_forward<float>(net.cell, {}, xs[0], s);
    benchmark::DoNotOptimize(step.next.h.data());
  }
  state.SetLabel(std::string(slstm::to_string(kind)));
}

// One training batch: forward over 28 rows, loss, BPTT.
void BM_BatchForwardBackward(benchmark::State& state) {
  const auto kind = variant_arg(state);
  const auto net = slstm::init_network<float>(kind, {}, 1);
  const auto xs = random_sequence(3);
  std::vector<int> targets(kBatch);
  for (Index b = 0; b < kBatch; ++b) targets[static_cast<std::size_t>(b)] = static_cast<int>(b % 10);
  auto grads = net.zeros_like();
  for (auto _ : state) {
    const auto out = slstm::sequence_forward<float>(net, {}, xs);
    const auto loss = slstm::softmax_xent<float>(out.logits, targets);
    slstm::bptt_accumulate(net, {}, out.tape, loss.dlogits, grads);
    benchmark::DoNotOptimize(grads.head.tensors()[0].data());
  }
  state.SetItemsProcessed(state.iterations() * kBatch);
  state.SetLabel(std::string(slstm::to_string(kind)));
}

}  // namespace

BENCHMARK(BM_CellStep)->DenseRange(0, 3);
BENCHMARK(BM_BatchForwardBackward)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
