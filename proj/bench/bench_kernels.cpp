// Blocked/OpenMP kernels against the serial reference on model-sized shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "cmgan/kernels.hpp"
#include "cmgan/random.hpp"
#include "cmgan/trainer.hpp"

using namespace cmgan;

namespace {

std::vector<float> random_vec(int64_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
  return v;
}

// Dilated 2x3 layer of the dense encoder on a 0.5 s slice.
kernels::Conv2dGeometry encoder_conv() {
  kernels::Conv2dGeometry g;
  g.batch = 1;
  g.in_channels = 64;
  g.out_channels = 64;
  g.in_h = 81;
  g.in_w = 100;
  g.kernel_h = 2;
  g.kernel_w = 3;
  g.dilation_h = 2;
  g.pad_top = 2;
  g.pad_left = 1;
  g.pad_right = 1;
  return g;
}

template <bool Reference>
void BM_Gemm(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(static_cast<size_t>(n * n));
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::gemm<float>(false, false, n, n, n, a, b, c, false);
    else
      kernels::gemm<float>(false, false, n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * n * n * n * state.iterations(), benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

template <bool Reference>
void BM_Conv2dForward(benchmark::State& state) {
  const auto g = encoder_conv();
  const auto in = random_vec(g.input_size(), 3), w = random_vec(g.weight_size(), 4), bias = random_vec(g.out_channels, 5);
  std::vector<float> out(static_cast<size_t>(g.output_size()));
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_forward<float>(g, in, w, bias, out);
    else
      kernels::conv2d_forward<float>(g, in, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_Conv2dBackward(benchmark::State& state) {
  const auto g = encoder_conv();
  const auto in = random_vec(g.input_size(), 3), w = random_vec(g.weight_size(), 4);
  const auto gout = random_vec(g.output_size(), 6);
  std::vector<float> gin(static_cast<size_t>(g.input_size())), gw(static_cast<size_t>(g.weight_size())),
      gb(static_cast<size_t>(g.out_channels));
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::conv2d_backward_input<float>(g, gout, w, gin);
      kernels::reference::conv2d_backward_weight<float>(g, gout, in, gw, gb);
    } else {
      kernels::conv2d_backward_input<float>(g, gout, w, gin);
      kernels::conv2d_backward_weight<float>(g, gout, in, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

// Time-stage attention: one slice per frequency bin, 81 frames, 4 heads of 16.
template <bool Reference>
void BM_Attention(benchmark::State& state) {
  const int64_t slices = 100 * 4, L = 81, d = 16;
  const auto q = random_vec(slices * L * d, 7), k = random_vec(slices * L * d, 8), v = random_vec(slices * L * d, 9);
  const auto gout = random_vec(slices * L * d, 10);
  std::vector<float> out(q.size()), lse(static_cast<size_t>(slices * L)), gq(q.size()), gk(q.size()), gv(q.size());
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::attention_forward<float>(slices, L, d, 0.25f, q, k, v, out, lse);
      kernels::reference::attention_backward<float>(slices, L, d, 0.25f, q, k, v, out, lse, gout, gq, gk, gv);
    } else {
      kernels::attention_forward<float>(slices, L, d, 0.25f, q, k, v, out, lse);
      kernels::attention_backward<float>(slices, L, d, 0.25f, q, k, v, out, lse, gout, gq, gk, gv);
    }
    benchmark::DoNotOptimize(gv.data());
  }
}

template <bool Reference>
void BM_Depthwise(benchmark::State& state) {
  kernels::Depthwise1dGeometry g{400, 81, 128, 31};
  const auto in = random_vec(g.batch * g.length * g.channels, 11), w = random_vec(g.channels * g.kernel, 12);
  const auto bias = random_vec(g.channels, 13), gout = random_vec(g.batch * g.length * g.channels, 14);
  std::vector<float> out(in.size()), gin(in.size()), gw(w.size()), gb(bias.size());
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::depthwise1d_forward<float>(g, in, w, bias, out);
      kernels::reference::depthwise1d_backward<float>(g, gout, in, w, gin, gw, gb);
    } else {
      kernels::depthwise1d_forward<float>(g, in, w, bias, out);
      kernels::depthwise1d_backward<float>(g, gout, in, w, gin, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

// One full training step of a reduced model on 0.25 s slices.
void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.generator.channels = static_cast<int>(state.range(0));
  cfg.generator.blocks = 2;
  cfg.slice_seconds = 0.25;
  SynthOptions so;
  so.seconds = 0.25;
  const auto corpus = synth_corpus(so);
  Trainer t(cfg);
  Rng rng(1);
  BatchOptions bo;
  bo.slice_samples = static_cast<int64_t>(cfg.slice_seconds * kSampleRate);
  const Batch batch = make_batch(corpus, bo, rng);
  for (auto _ : state) benchmark::DoNotOptimize(t.train_step(batch).l_g);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/blocked")->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dForward<false>)->Name("conv2d_forward/blocked")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dForward<true>)->Name("conv2d_forward/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dBackward<false>)->Name("conv2d_backward/blocked")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dBackward<true>)->Name("conv2d_backward/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<false>)->Name("attention/blocked")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<true>)->Name("attention/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Depthwise<false>)->Name("depthwise1d/blocked")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Depthwise<true>)->Name("depthwise1d/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->Name("train_step")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
