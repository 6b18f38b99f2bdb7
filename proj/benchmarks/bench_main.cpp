#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "gs4d/fitting.hpp"
#include "gs4d/losses_metrics.hpp"
#include "gs4d/rasterizer.hpp"

namespace {

using namespace gs4d;

GaussianScene random_scene(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GaussianScene scene;
  for (int i = 0; i < count; ++i) {
    Gaussian4D g;
    g.position = Vec3(0.8 * u(rng), 0.8 * u(rng), 3.0 + 0.01 * i);
    g.scale = Vec2(0.05 + 0.05 * std::abs(u(rng)), 0.05 + 0.05 * std::abs(u(rng)));
    g.orientation = axis_angle_to_quat(Vec3(0.3 * u(rng), 0.3 * u(rng), 3.0 * u(rng)));
    g.opacity = 0.5 + 0.4 * std::abs(u(rng));
    g.color = Vec3(0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng));
    g.lifespan = 4.0;
    g.velocity = Vec3(0.2 * u(rng), 0.2 * u(rng), 0.0);
    scene.push_back(g);
  }
  return scene;
}

CameraIntrinsics camera(int size) {
  CameraIntrinsics c;
  c.fx = c.fy = size;
  c.cx = c.cy = 0.5 * size;
  c.width = c.height = size;
  return c;
}

void BM_Render(benchmark::State& state) {
  const GaussianScene scene = random_scene(static_cast<int>(state.range(0)), 1);
  const CameraIntrinsics intr = camera(static_cast<int>(state.range(1)));
  RenderConfig cfg;
  cfg.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(render(scene, intr, CameraPose{}, 0.1, cfg));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Render)->Args({256, 64})->Args({1024, 128})->Args({4096, 256})
    ->Unit(benchmark::kMillisecond);

void BM_RenderOracle(benchmark::State& state) {
  const GaussianScene scene = random_scene(static_cast<int>(state.range(0)), 1);
  const CameraIntrinsics intr = camera(64);
  for (auto _ : state) benchmark::DoNotOptimize(render_oracle(scene, intr, CameraPose{}, 0.1));
}
BENCHMARK(BM_RenderOracle)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_LossAndGrad(benchmark::State& state) {
  const int count = static_cast<int>(state.range(0));
  const GaussianScene truth = random_scene(count, 2);
  GaussianScene init = random_scene(count, 2);
  for (auto& v : init.velocity) v = Vec3::Zero();
  std::vector<Frame> frames;
  const CameraIntrinsics intr = camera(64);
  for (double t : {-0.5, 0.0, 0.5}) {
    Frame f;
    f.image = render(truth, intr, CameraPose{}, t).color;
    f.intrinsics = intr;
    f.timestamp = t;
    frames.push_back(std::move(f));
  }
  FitConfig cfg;
  cfg.threads = 1;
  const ParamVector pv = encode_params(init);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(pv, frames, cfg, 5000));
}
BENCHMARK(BM_LossAndGrad)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(size, size, 3), b(size, size, 3);
  for (double& v : a.values()) v = u(rng);
  for (double& v : b.values()) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_SsimGradient(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(size, size, 3), b(size, size, 3);
  for (double& v : a.values()) v = u(rng);
  for (double& v : b.values()) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim_gradient(a, b));
}
BENCHMARK(BM_SsimGradient)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
