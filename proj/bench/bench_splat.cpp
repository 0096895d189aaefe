// Serial reference kernels against the OpenMP ones, forward and VJP.

#include <vector>

#include <benchmark/benchmark.h>

#include "idpose/rng.hpp"
#include "idpose/splat_kernels.hpp"
#include "idpose/synthetic.hpp"

using namespace idpose;
using namespace idpose::kernels;

namespace {

SplatBatch make_batch(int points, const LatentShape& shape) {
  CounterStream rng(1);
  SplatBatch b;
  b.channels = shape.channels;
  for (int p = 0; p < points; ++p) {
    b.u.push_back(rng.uniform(0, shape.width));
    b.v.push_back(rng.uniform(0, shape.height));
    for (int c = 0; c < shape.channels; ++c) b.amplitude.push_back(rng.uniform(-1, 1));
  }
  return b;
}

LatentShape shape_for(const benchmark::State& state) {
  const int side = static_cast<int>(state.range(1));
  return {4, side, side};
}

template <auto Kernel>
void forward(benchmark::State& state) {
  const LatentShape shape = shape_for(state);
  const SplatBatch b = make_batch(static_cast<int>(state.range(0)), shape);
  std::vector<double> out(shape.size());
  for (auto _ : state) {
    Kernel(b, shape, 1.5, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void backward(benchmark::State& state) {
  const LatentShape shape = shape_for(state);
  const SplatBatch b = make_batch(static_cast<int>(state.range(0)), shape);
  std::vector<double> g(shape.size(), 0.25), gu(b.points()), gv(b.points());
  for (auto _ : state) {
    Kernel(b, shape, 1.5, g, gu, gv);
    benchmark::DoNotOptimize(gu.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void render_scene(benchmark::State& state) {
  SceneRecipe r;
  r.num_points = static_cast<int>(state.range(0));
  const SyntheticScene scene = make_scene(r, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(render(scene, {1.2, 0.4, 3.0}));
  }
}

const std::vector<std::vector<long>> kArgs = {{48, 200, 1000}, {32, 64}};

}  // namespace

BENCHMARK(forward<splat_reference>)->ArgsProduct(kArgs)->Name("splat/reference");
BENCHMARK(forward<splat_parallel>)->ArgsProduct(kArgs)->Name("splat/parallel");
BENCHMARK(backward<splat_vjp_reference>)->ArgsProduct(kArgs)->Name("splat_vjp/reference");
BENCHMARK(backward<splat_vjp_parallel>)->ArgsProduct(kArgs)->Name("splat_vjp/parallel");
BENCHMARK(render_scene)->Arg(48)->Arg(480);

BENCHMARK_MAIN();
