#include <benchmark/benchmark.h>

#include "hybridnet/decoder.hpp"
#include "hybridnet/memory.hpp"
#include "hybridnet/ops.hpp"

namespace hn = hybridnet;

namespace {

hn::Tensor rand_tensor(hn::Rng& rng, hn::Shape s) {
  hn::Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  hn::Rng rng(1);
  const hn::Tensor a = rand_tensor(rng, {n, n}), b = rand_tensor(rng, {n, n});
  for (auto _ : state) {
    hn::Graph g;
    benchmark::DoNotOptimize(hn::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_TriangleConv(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  hn::Rng rng(2);
  const hn::Tensor maps = rand_tensor(rng, {8, n, n}), kernel = rand_tensor(rng, {8, 8, 3, 3}),
                   bias = rand_tensor(rng, {8});
  for (auto _ : state) {
    hn::Graph g;
    benchmark::DoNotOptimize(
        hn::triangle_conv(g.constant(maps), g.constant(kernel), g.constant(bias)).value().data().data());
  }
}
BENCHMARK(BM_TriangleConv)->Arg(12)->Arg(32);

void BM_MemoryRollout(benchmark::State& state) {
  hn::ModelConfig c;
  hn::ParamStore store;
  hn::Rng rng(3);
  hn::MemoryModule mem("m", c, store, rng);
  const hn::Tensor e = rand_tensor(rng, {static_cast<std::size_t>(state.range(0)), c.d_model});
  for (auto _ : state) {
    hn::Graph g(store, nullptr, false);
    benchmark::DoNotOptimize(mem.rollout(g, g.constant(e)).pooled->value().data().data());
  }
}
BENCHMARK(BM_MemoryRollout)->Arg(4)->Arg(12);

void BM_JointLossForwardBackward(benchmark::State& state) {
  hn::ModelConfig c;
  c.vocab_size = 60;
  hn::ParamStore store;
  hn::HybridNet model(c, store, 4);
  hn::Rng rng(5);
  const hn::FeatureBundle b{"x", rand_tensor(rng, {8, 16}), rand_tensor(rng, {4, 8}), rand_tensor(rng, {6, 12})};
  const hn::TokenizedRecord rec{{1, 10, 20, 30, 2}, {1, 40, 2}, {1, 41, 42, 2}, {1, 43, 44, 2}};
  hn::GradBuffer grads(store);
  const bool backward = state.range(0) != 0;
  for (auto _ : state) {
    hn::Graph g(store, backward ? &grads : nullptr, backward);
    const hn::JointLoss loss = hn::joint_loss(g, model, b, rec, {});
    if (backward) g.backward(loss.total);
    benchmark::DoNotOptimize(loss.total.value()[0]);
  }
}
BENCHMARK(BM_JointLossForwardBackward)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
