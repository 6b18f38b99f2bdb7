// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gs4d/density_control.hpp"
#include "gs4d/fitting.hpp"
#include "gs4d/losses_metrics.hpp"
#include "gs4d/rasterizer.hpp"
#include "gs4d/scene_io.hpp"
#include "gs4d/token_scheduler.hpp"
#include "scenes.hpp"

using namespace gs4d;
using gs4d::testing::LayeredSceneOptions;
using gs4d::testing::square_camera;

namespace {

// Tolerances and budgets.
constexpr double kBoundaryTol = 1e-9;
constexpr double kBoundaryBudgetS = 1.0;
constexpr double kOracleTol = 1e-5;
constexpr double kOracleBudgetS = 60.0;
constexpr double kGradientFraction = 0.95;
constexpr double kGradientBudgetS = 600.0;
constexpr double kRecoveryPsnrDb = 35.0;
constexpr double kRecoveryVelocityTol = 1e-2;
constexpr double kRecoveryBudgetS = 300.0;
constexpr double kFlowTolPx = 0.5;
constexpr double kStandardErrors = 3.0;
constexpr double kMetricTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome temporal_boundary() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> o(0.0, 1.0), c(-1e3, 1e3), l(1e-3, 1e3);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Gaussian4D g;
    g.opacity = o(rng);
    g.t_center = c(rng);
    g.lifespan = l(rng);
    for (double sign : {-1.0, 1.0}) {
      const double t = g.t_center + sign * 0.5 * g.lifespan;
      worst = std::max(worst, std::abs(opacity_at(g, t) - kOpacityThreshold * g.opacity));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= kBoundaryTol && secs < kBoundaryBudgetS,
          fmt("max |o_t - 0.05 o| = %.3g over 1000 draws, %.3f s", worst, secs)};
}

Outcome density_arithmetic() {
  const DensifyPlan p = densify_plan(2, 4, 10, 14);
  const bool exact = p.ratio_numerator * 196 == 160 * p.ratio_denominator;
  return {exact && p.sampling_gain == 16,
          fmt("ratio %lld/%lld = %.6f, gain %d", static_cast<long long>(p.ratio_numerator),
              static_cast<long long>(p.ratio_denominator), p.gaussian_ratio, p.sampling_gain)};
}

Outcome attention_identity() {
  const CostReport canonical = attention_cost(build_layout(64, 4, 3, 1296));
  const bool ratio_ok = canonical.ratio_numerator == 7 && canonical.ratio_denominator == 16 &&
                        canonical.ratio == 0.4375;
  // Measured pair counting on a layout small enough to run attention over.
  const TokenLayout small = build_layout(16, 4, 3, 16);
  const CostReport predicted = attention_cost(small);
  const PassthroughReport measured = token_passthrough_check(small, 8, 1);
  const bool pairs_ok = measured.measured_pairs_per_level == predicted.per_level &&
                        measured.measured_pairs_total == predicted.total &&
                        measured.shapes_preserved;
  return {ratio_ok && pairs_ok,
          fmt("ratio %lld/%lld; measured pairs %lld vs predicted %lld", 
              static_cast<long long>(canonical.ratio_numerator),
              static_cast<long long>(canonical.ratio_denominator),
              static_cast<long long>(measured.measured_pairs_total),
              static_cast<long long>(predicted.total))};
}

Outcome layout_constants() {
  const TokenLayout layout = build_layout(64, 4, 3, 1296);
  bool ok = layout.per_level.size() == 3;
  for (const LevelLayout& lv : layout.per_level) ok = ok && lv.tokens_per_chunk == 20736;
  return {ok, fmt("tokens per chunk %lld / %lld / %lld",
                  static_cast<long long>(layout.per_level[0].tokens_per_chunk),
                  static_cast<long long>(layout.per_level[1].tokens_per_chunk),
                  static_cast<long long>(layout.per_level[2].tokens_per_chunk))};
}

Outcome oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  const CameraIntrinsics intr = square_camera(64, 64);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    LayeredSceneOptions opt;
    opt.count = 16 + static_cast<int>(seed * 12);  // up to 244
    opt.max_speed = 0.3;
    opt.max_spin = 1.0;
    opt.lifespan = 2.0;
    const GaussianScene scene = gs4d::testing::layered_scene(rng, opt);
    RenderConfig cfg;
    cfg.background = Vec3(0.05, 0.1, 0.2);
    const double t = 0.1 * static_cast<double>(seed % 5);
    const RenderOutput a = render(scene, intr, CameraPose{}, t, cfg, t + 0.2);
    const RenderOutput b = render_oracle(scene, intr, CameraPose{}, t, cfg, t + 0.2);
    worst = std::max(worst, gs4d::testing::max_abs_diff(a, b));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= kOracleTol && secs < kOracleBudgetS,
          fmt("max-abs difference %.3g over 20 scenes, %.2f s", worst, secs)};
}

GaussianScene gradient_scene(std::mt19937_64& rng, int count) {
  LayeredSceneOptions opt;
  opt.count = count;
  opt.layer_gap = 0.1;
  opt.max_tilt = 0.4;
  opt.min_scale = 0.1;
  opt.max_scale = 0.3;
  opt.field_of_view = 0.35;
  opt.max_speed = 0.4;
  opt.lifespan = 1.5;
  GaussianScene scene = gs4d::testing::layered_scene(rng, opt);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (auto& w : scene.ang_velocity) w = Vec3(u(rng), u(rng), u(rng));
  for (auto& v : scene.velocity) v.z() = 0.5 * u(rng);
  return scene;
}

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  FitConfig cfg;
  std::size_t checked = 0, agreeing = 0, excluded = 0;
  double worst_fraction = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    const GaussianScene truth = gradient_scene(rng, 16 + static_cast<int>(seed % 3) * 8);
    std::vector<Frame> frames;
    for (int f = 0; f < 2; ++f) {
      frames.push_back(gs4d::testing::rendered_frame(
          truth, square_camera(32, 32), gs4d::testing::jittered_pose(rng, 0.05, 0.1),
          -0.3 + 0.6 * f, {}, true));
    }
    GaussianScene init = truth;
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (std::size_t i = 0; i < init.size(); ++i) {
      init.position[i] += Vec3(u(rng), u(rng), 0.2 * u(rng));
      init.opacity[i] = std::clamp(init.opacity[i] + u(rng), 0.05, 0.95);
      init.color[i] = (init.color[i] + Vec3(u(rng), u(rng), u(rng))).cwiseMax(0.05).cwiseMin(0.95);
      init.velocity[i] += Vec3(u(rng), u(rng), u(rng));
    }
    const auto r = gs4d::testing::check_gradient(encode_params(init), frames, cfg, 2500);
    checked += r.checked;
    agreeing += r.agreeing;
    excluded += r.excluded;
    worst_fraction = std::min(worst_fraction, r.fraction());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double fraction = checked == 0 ? 0.0 : double(agreeing) / double(checked);
  return {fraction >= kGradientFraction && secs < kGradientBudgetS,
          fmt("%zu/%zu coordinates agree (%.2f%%, worst scene %.2f%%), %zu excluded at "
              "discontinuities, %.1f s",
              agreeing, checked, 100.0 * fraction, 100.0 * worst_fraction, excluded, secs)};
}

// 12 static surfels tiling a backdrop plus 4 movers in front.
GaussianScene recovery_scene() {
  GaussianScene scene;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 12; ++i) {
    Gaussian4D g;
    const int gx = i % 4, gy = i / 4;
    g.position = Vec3(-0.9 + 0.6 * gx, -0.6 + 0.6 * gy, 4.0 + 0.2 * i);
    g.scale = Vec2(0.3 + 0.1 * u(rng), 0.3 + 0.1 * u(rng));
    g.orientation = axis_angle_to_quat(Vec3(0.0, 0.0, 6.0 * u(rng)));
    g.opacity = 0.6 + 0.3 * u(rng);
    g.color = Vec3(0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng));
    g.lifespan = 1e4;
    scene.push_back(g);
  }
  const Vec3 velocities[4] = {Vec3(0.3, 0.1, 0.0), Vec3(-0.25, 0.15, 0.05),
                              Vec3(0.1, -0.3, 0.0), Vec3(-0.2, -0.2, -0.05)};
  const Vec3 starts[4] = {Vec3(-0.35, -0.3, 2.6), Vec3(0.35, -0.25, 2.9), Vec3(-0.25, 0.35, 3.2),
                          Vec3(0.3, 0.3, 3.5)};
  for (int i = 0; i < 4; ++i) {
    Gaussian4D g;
    g.position = starts[i];
    g.scale = Vec2(0.18, 0.12);
    g.orientation = axis_angle_to_quat(Vec3(0.1, -0.1, 0.7 * i));
    g.opacity = 0.9;
    g.color = Vec3(i == 0 ? 0.9 : 0.2, i == 1 ? 0.9 : 0.3, i >= 2 ? 0.9 : 0.1);
    g.lifespan = 1e4;
    g.velocity = velocities[i];
    scene.push_back(g);
  }
  return scene;
}

Outcome synthetic_recovery() {
  const auto start = std::chrono::steady_clock::now();
  const GaussianScene truth = recovery_scene();
  const CameraIntrinsics intr = square_camera(48, 48);
  intr.validate();
  // A single camera cannot separate depth from scale, so each timestamp is seen
  // by a small converging rig.
  const std::vector<CameraPose> rig = gs4d::testing::converging_rig({-0.5, 0.5}, 3.5);
  std::vector<Frame> train, held_out;
  for (int i = 0; i < 16; ++i) {
    const double t = -1.0 + 2.0 * i / 15.0;
    for (const CameraPose& pose : rig)
      train.push_back(gs4d::testing::rendered_frame(truth, intr, pose, t, {}, false));
  }
  for (int j = 0; j < 8; ++j) {
    const double t = -1.0 + (4.0 * j + 1.0) / 15.0;  // midway between training frames 2j, 2j+1
    held_out.push_back(gs4d::testing::rendered_frame(truth, intr, CameraPose{}, t, {}, false));
  }
  GaussianScene init = truth;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (std::size_t i = 0; i < init.size(); ++i) {
    init.position[i] += Vec3(jitter(rng), jitter(rng), jitter(rng));
    init.velocity[i] = Vec3::Zero();
  }
  FitConfig cfg;
  cfg.iterations = 2000;
  cfg.learning_rate = 1e-2;
  cfg.lr_final_fraction = 0.01;
  cfg.weights = LossWeights{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0};
  const FitResult r = fit(init, train, cfg);

  double worst_psnr = 1e9;
  for (const Frame& f : held_out) {
    const RenderOutput out = render(r.scene, f.intrinsics, f.pose, f.timestamp);
    worst_psnr = std::min(worst_psnr, psnr(out.color, f.image));
  }
  double worst_velocity = 0.0;
  for (std::size_t i = 12; i < 16; ++i) {
    worst_velocity = std::max(worst_velocity,
                              (r.scene.velocity[i] - truth.velocity[i]).cwiseAbs().maxCoeff());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst_psnr >= kRecoveryPsnrDb && worst_velocity <= kRecoveryVelocityTol &&
              secs < kRecoveryBudgetS,
          fmt("held-out PSNR min %.2f dB, velocity error max %.2g, best iteration %d, %.1f s",
              worst_psnr, worst_velocity, r.best_iteration, secs)};
}

Outcome flow_correctness() {
  const CameraIntrinsics intr = square_camera(64, 64);
  Gaussian4D g;
  g.position = Vec3(-0.15, 0.1, 3.0);
  g.scale = Vec2(0.3, 0.3);
  g.opacity = 0.9;
  g.lifespan = 1e6;
  g.velocity = Vec3(0.5, -0.3, 0.4);
  GaussianScene mover;
  mover.push_back(g);
  const double t0 = 0.0, t1 = 0.4;
  const RenderOutput out = render(mover, intr, CameraPose{}, t0, {}, t1);
  const Vec2 expected = *project(intr, CameraPose{}, position_at(g, t1)) -
                        *project(intr, CameraPose{}, position_at(g, t0));
  double worst = 0.0;
  int covered = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (out.alpha.at(x, y) < 1e-3) continue;
      ++covered;
      worst = std::max({worst, std::abs(out.flow.at(x, y, 0) - expected.x()),
                        std::abs(out.flow.at(x, y, 1) - expected.y())});
    }
  }
  std::mt19937_64 rng(5);
  LayeredSceneOptions opt;
  opt.count = 100;
  const GaussianScene still = gs4d::testing::layered_scene(rng, opt);
  double static_max = 0.0;
  for (double v : render_flow(still, intr, CameraPose{}, 0.0, 1.0).values()) {
    static_max = std::max(static_max, std::abs(v));
  }
  return {covered > 0 && worst <= kFlowTolPx && static_max == 0.0,
          fmt("max flow error %.3g px over %d pixels; static scene max |flow| %.3g", worst,
              covered, static_max)};
}

Outcome pruning_superiority() {
  const int p = 14, S = 10;
  std::mt19937_64 rng(11);
  std::vector<int> hot(S);
  for (int i = 0; i < S; ++i) hot[i] = (i * 37 + 5) % (p * p);
  std::uniform_int_distribution<int> pick(0, S - 1);
  std::uniform_real_distribution<double> strength(0.5, 1.0), low(0.0, 0.05);
  PatchOpacityGrid grid;
  grid.patch_size = p;
  grid.values.resize(static_cast<std::size_t>(400) * p * p);
  for (std::size_t patch = 0; patch < 400; ++patch) {
    for (int k = 0; k < p * p; ++k) grid.values[patch * p * p + k] = low(rng);
    for (int a = 0; a < 2; ++a) grid.values[patch * p * p + hot[pick(rng)]] = strength(rng);
  }
  const std::vector<PatchOpacityGrid> grids = {grid};
  const double hist = kept_activation(grids, select_channels(aggregate_histogram(grids), S));

  std::vector<double> random_kept;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    random_kept.push_back(kept_activation(grids, random_channels(p, S, seed)));
  }
  const double n = static_cast<double>(random_kept.size());
  const double mean = std::accumulate(random_kept.begin(), random_kept.end(), 0.0) / n;
  double var = 0.0;
  for (double v : random_kept) var += (v - mean) * (v - mean);
  const double se = std::sqrt(var / (n - 1.0) / n);
  const double expected = double(S) / (p * p);
  return {hist == 1.0 && std::abs(mean - expected) <= kStandardErrors * se,
          fmt("histogram keeps %.4f; random keeps %.4f +- %.4f (S/p^2 = %.4f)", hist, mean, se,
              expected)};
}

Outcome metric_sanity() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(32, 32, 3);
  for (double& v : a.values()) v = u(rng);
  Image depth(16, 16, 1), offset(16, 16, 1);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    depth.values()[i] = 1.0 + u(rng);
    offset.values()[i] = depth.values()[i] + 0.3;
  }
  Image nz(8, 8, 3), nx(8, 8, 3);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      nz.at(x, y, 2) = 1.0;
      nx.at(x, y, 0) = 1.0;
    }
  }
  const LossWeights w;
  const LossWeights half = warmup(1250, w), full = warmup(2500, w);
  const bool warm_ok = std::abs(half.lpips - 0.5 * w.lpips) < kMetricTol &&
                       std::abs(half.ssim - 0.5 * w.ssim) < kMetricTol &&
                       std::abs(half.velocity - 0.5 * w.velocity) < kMetricTol &&
                       std::abs(half.angular - 0.5 * w.angular) < kMetricTol &&
                       std::abs(half.lifespan - 0.5 * w.lifespan) < kMetricTol &&
                       std::abs(half.depth - 0.5 * w.depth) < kMetricTol &&
                       std::abs(half.normal - 0.5 * w.normal) < kMetricTol &&
                       full.lpips == w.lpips && full.ssim == w.ssim &&
                       full.velocity == w.velocity && full.depth == w.depth &&
                       full.normal == w.normal;
  const double p = psnr(a, a), s = ssim(a, a), d = depth_rmse(offset, depth),
               n = normal_angle_deg(nz, nx);
  const bool ok = p == kPsnrCap && std::abs(s - 1.0) < kMetricTol &&
                  std::abs(d - 0.3) < kMetricTol && std::abs(n - 90.0) < kMetricTol && warm_ok;
  return {ok, fmt("psnr %.1f, ssim %.15f, depth_rmse %.12f, angle %.9f, warmup %s", p, s, d, n,
                  warm_ok ? "ok" : "wrong")};
}

Outcome format_round_trip() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> q(-2048, 2048);
  const auto f = [&] { return q(rng) / 512.0; };
  GaussianScene scene;
  for (int i = 0; i < 50; ++i) {
    Gaussian4D g;
    g.position = Vec3(f(), f(), f());
    g.scale = Vec2(std::abs(f()) + 0.5, std::abs(f()) + 0.5);
    g.orientation = Quat{1.0, 0.0, 0.0, 0.0};
    g.opacity = 0.25 + std::abs(f()) / 8.0;
    g.color = Vec3(0.5, 0.25, 0.125);
    g.t_center = f();
    g.lifespan = 2.0;
    g.velocity = Vec3(f(), f(), f());
    g.ang_velocity = Vec3(f(), f(), f());
    scene.push_back(g);
  }
  scene.time_base = 17.25;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("gs4d_acceptance_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);
  write_scene(scene, dir / "scene.4dgt");
  const GaussianScene back = read_scene(dir / "scene.4dgt");
  write_scene(back, dir / "again.4dgt");
  const bool bytes_equal = read_file(dir / "scene.4dgt") == read_file(dir / "again.4dgt");
  const bool fields_equal = back.position == scene.position && back.scale == scene.scale &&
                            back.orientation == scene.orientation &&
                            back.opacity == scene.opacity && back.color == scene.color &&
                            back.t_center == scene.t_center && back.lifespan == scene.lifespan &&
                            back.velocity == scene.velocity &&
                            back.ang_velocity == scene.ang_velocity &&
                            back.time_base == scene.time_base;
  write_scene(GaussianScene{}, dir / "empty.4dgt");
  const auto empty_size = std::filesystem::file_size(dir / "empty.4dgt");
  std::filesystem::remove_all(dir);
  return {bytes_equal && fields_equal && empty_size == 32,
          fmt("fields %s, bytes %s, empty file %llu bytes", fields_equal ? "equal" : "differ",
              bytes_equal ? "equal" : "differ", static_cast<unsigned long long>(empty_size))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"temporal boundary identity", temporal_boundary},
      {"density-control arithmetic", density_arithmetic},
      {"attention cost identity", attention_identity},
      {"layout constants", layout_constants},
      {"rasterizer-oracle equivalence", oracle_equivalence},
      {"gradient correctness", gradient_correctness},
      {"synthetic dynamic recovery", synthetic_recovery},
      {"flow correctness", flow_correctness},
      {"pruning strategy superiority", pruning_superiority},
      {"metric sanity", metric_sanity},
      {"format round trip", format_round_trip},
  };
  // Optional argument: run a single criterion by number.
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
