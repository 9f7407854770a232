// Microbenchmarks for the hot paths: conv3d, the TV-L1 solver, and the two
// full forward passes whose latency gap the bench CLI command reports.
#include <benchmark/benchmark.h>

#include <random>

#include "bers/net.hpp"
#include "bers/ops.hpp"
#include "bers/synthvid.hpp"
#include "bers/train.hpp"
#include "bers/tvl1.hpp"

namespace {

using namespace bers;

Tensor random_tensor(Shape shape, uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : t.vec()) v = dist(rng);
  return t;
}

Dataset bench_dataset() {
  DatasetSpec spec;
  spec.classes = 4;
  spec.clips_per_class = 2;
  spec.frames = 8;
  spec.seed = 99;
  return generate(spec);
}

void BM_Conv3dForward(benchmark::State& state) {
  const int64_t groups = state.range(0);
  Tensor x = random_tensor({1, 16, 8, 16, 16}, 1);
  Tensor w = random_tensor({16, 16 / groups, 3, 3, 3}, 2);
  Tensor b = Tensor::zeros({16});
  Conv3dSpec spec;
  spec.padding = {1, 1, 1};
  spec.groups = static_cast<int>(groups);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(nullptr, x, w, b, spec));
}
BENCHMARK(BM_Conv3dForward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Tvl1Flow(benchmark::State& state) {
  const int64_t side = state.range(0);
  DatasetSpec spec;
  spec.classes = 4;
  spec.clips_per_class = 1;
  spec.frames = 2;
  spec.height = side;
  spec.width = side;
  spec.seed = 7;
  Dataset ds = generate(spec);
  const std::vector<GrayFrame> gray = luminance(ds.clips[0].clip);
  const Tvl1Params prm;
  for (auto _ : state) benchmark::DoNotOptimize(compute_flow(gray[0], gray[1], prm));
}
BENCHMARK(BM_Tvl1Flow)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_StudentForwardEval(benchmark::State& state) {
  Dataset ds = bench_dataset();
  TrainConfig cfg;
  StudentNet net = build_student(config_for(ds, cfg), 3);
  Tensor clip = clips_to_tensor(ds, {0});
  for (auto _ : state)
    benchmark::DoNotOptimize(forward_student(net, nullptr, clip, Mode::kEval).logits);
}
BENCHMARK(BM_StudentForwardEval)->Unit(benchmark::kMillisecond);

void BM_TeacherPipelineEval(benchmark::State& state) {
  // flow solve + teacher forward: the work the RGB-only student bypasses
  Dataset ds = bench_dataset();
  TrainConfig cfg;
  TeacherNet net = build_teacher(config_for(ds, cfg), 4);
  const VideoClip& clip = ds.clips[0].clip;
  const Tvl1Params prm;
  const int64_t t = clip.frames - 1, h = clip.height, w = clip.width;
  for (auto _ : state) {
    FlowStack stack = clip_flow_stack(clip, prm);
    Tensor fb = Tensor::zeros({1, 2, t, h, w});
    for (int64_t i = 0; i < t; ++i) {
      std::copy(stack[i].u.begin(), stack[i].u.end(), fb.vec().begin() + (0 * t + i) * h * w);
      std::copy(stack[i].v.begin(), stack[i].v.end(), fb.vec().begin() + (1 * t + i) * h * w);
    }
    benchmark::DoNotOptimize(forward_teacher(net, nullptr, fb, Mode::kEval).logits);
  }
}
BENCHMARK(BM_TeacherPipelineEval)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
