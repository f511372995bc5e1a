// Dense vs windowed attention, forward alone and forward plus backward.
#include <benchmark/benchmark.h>

#include "s2tl/attention.hpp"
#include "s2tl/ops.hpp"
#include "s2tl/rng.hpp"

namespace {

using namespace s2tl;

constexpr std::size_t kHeads = 4;
constexpr std::size_t kHeadDim = 64;

Tensor random(std::size_t n, Rng& rng, bool grad) {
  std::vector<float> v(kHeads * n * kHeadDim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  Tensor t = Tensor::from({kHeads, n, kHeadDim}, v);
  return grad ? t.set_requires_grad() : t;
}

template <class Attend>
void run(benchmark::State& state, Attend attend, bool backward_pass) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor q = random(n, rng, backward_pass), k = random(n, rng, backward_pass), v = random(n, rng, backward_pass);
  for (auto _ : state) {
    if (backward_pass) {
      Tensor loss = sum(attend(q, k, v));
      backward(loss);
      benchmark::DoNotOptimize(q.grad().data());
    } else {
      NoGradGuard guard;
      Tensor out = attend(q, k, v);
      benchmark::DoNotOptimize(out.data().data());
    }
  }
  state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}

void dense_forward(benchmark::State& s) {
  run(s, [](const Tensor& q, const Tensor& k, const Tensor& v) { return dense_attention(q, k, v, false); }, false);
}
void sliding_forward(benchmark::State& s) {
  run(s, [](const Tensor& q, const Tensor& k, const Tensor& v) { return windowed_attention(q, k, v, {48, 1}); }, false);
}
void dilated_forward(benchmark::State& s) {
  run(s, [](const Tensor& q, const Tensor& k, const Tensor& v) { return windowed_attention(q, k, v, {48, 2}); }, false);
}
void dense_train(benchmark::State& s) {
  run(s, [](const Tensor& q, const Tensor& k, const Tensor& v) { return dense_attention(q, k, v, false); }, true);
}
void sliding_train(benchmark::State& s) {
  run(s, [](const Tensor& q, const Tensor& k, const Tensor& v) { return windowed_attention(q, k, v, {48, 1}); }, true);
}

}  // namespace

BENCHMARK(dense_forward)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oNSquared)->Unit(benchmark::kMillisecond);
BENCHMARK(sliding_forward)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN)->Unit(benchmark::kMillisecond);
BENCHMARK(dilated_forward)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN)->Unit(benchmark::kMillisecond);
BENCHMARK(dense_train)->RangeMultiplier(2)->Range(256, 2048)->Complexity(benchmark::oNSquared)->Unit(benchmark::kMillisecond);
BENCHMARK(sliding_train)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
