#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gs4d/density_control.hpp"
#include "gs4d/fitting.hpp"
#include "gs4d/losses_metrics.hpp"
#include "gs4d/rasterizer.hpp"
#include "gs4d/scene_io.hpp"
#include "gs4d/token_scheduler.hpp"

namespace gs4d::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

json load_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DomainError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

RenderConfig render_config_from(const json& j) {
  RenderConfig c;
  c.tile_size = j.value("tile_size", c.tile_size);
  c.sigma_cutoff = j.value("sigma_cutoff", c.sigma_cutoff);
  c.transmittance_floor = j.value("transmittance_floor", c.transmittance_floor);
  c.alpha_clamp = j.value("alpha_clamp", c.alpha_clamp);
  c.dyn_velocity_threshold = j.value("dyn_velocity_threshold", c.dyn_velocity_threshold);
  c.dyn_lifespan_threshold = j.value("dyn_lifespan_threshold", c.dyn_lifespan_threshold);
  if (j.contains("background")) c.background = vec3_from(j["background"]);
  c.threads = j.value("threads", c.threads);
  return c;
}

LossWeights weights_from(const json& j) {
  LossWeights w;
  w.lpips = j.value("lpips", w.lpips);
  w.ssim = j.value("ssim", w.ssim);
  w.velocity = j.value("velocity", w.velocity);
  w.angular = j.value("angular", w.angular);
  w.lifespan = j.value("lifespan", w.lifespan);
  w.depth = j.value("depth", w.depth);
  w.normal = j.value("normal", w.normal);
  w.warmup_steps = j.value("warmup_steps", w.warmup_steps);
  return w;
}

FitConfig fit_config_from(const json& j) {
  FitConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_final_fraction = j.value("lr_final_fraction", c.lr_final_fraction);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("weights")) c.weights = weights_from(j["weights"]);
  if (j.contains("render")) c.render = render_config_from(j["render"]);
  c.validate();
  return c;
}

std::string frame_name(const ManifestFrame& f, std::size_t index) {
  std::string stem = f.image_path.stem().string();
  return stem.empty() ? "frame_" + std::to_string(index) : stem;
}

double manifest_span(const DatasetManifest& m) {
  if (m.frames.size() < 2) return 0.0;
  return m.frames.back().timestamp - m.frames.front().timestamp;
}

// ---- render ----------------------------------------------------------------

struct RenderArgs {
  std::string scene, manifest, out;
  double time = 0.0;
  std::optional<double> flow_until;
  bool dyn_mask = false;
};

json cmd_render(const RenderArgs& a) {
  const GaussianScene scene = read_scene(a.scene);
  const DatasetManifest m =
      parse_manifest(read_file(a.manifest), fs::path(a.manifest).parent_path());
  RenderConfig cfg;
  if (m.frames.size() >= 2) cfg.dyn_lifespan_threshold = 0.5 * manifest_span(m);
  fs::create_directories(a.out);

  const double t = a.time - scene.time_base;
  std::optional<double> t1;
  if (a.flow_until) t1 = *a.flow_until - scene.time_base;

  json outputs = json::array();
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const ManifestFrame& f = m.frames[i];
    const RenderOutput out = render(scene, f.intrinsics, f.pose, t, cfg, t1);
    const fs::path base = fs::path(a.out) / frame_name(f, i);
    json entry;
    entry["camera"] = i;
    const auto put = [&](const std::string& key, const std::string& suffix, const Image& img,
                         bool color) {
      fs::path p = base;
      p += suffix;
      color ? write_ppm(img, p) : write_pfm(img, p);
      entry[key] = p.string();
    };
    put("color", ".ppm", out.color, true);
    put("depth", ".depth.pfm", out.depth, false);
    put("normal", ".normal.pfm", out.normal, false);
    if (a.flow_until) put("flow", ".flow.pfm", out.flow, false);
    if (a.dyn_mask) put("mask", ".mask.pfm", out.dynamic_mask, false);
    outputs.push_back(entry);
  }
  return {{"command", "render"},
          {"time", a.time},
          {"gaussians", scene.size()},
          {"frames", outputs}};
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  std::string manifest, init, config, out;
};

json cmd_fit(const FitArgs& a) {
  const auto start = Clock::now();
  const FitConfig cfg = a.config.empty() ? FitConfig{} : fit_config_from(load_json_file(a.config));
  LoadedDataset data = load_manifest(a.manifest);
  const GaussianScene init = read_scene(a.init);
  for (Frame& f : data.frames) f.timestamp -= init.time_base;

  const FitResult r = fit(init, data.frames, cfg);
  write_scene(r.scene, a.out);
  return {{"command", "fit"},
          {"out", a.out},
          {"gaussians", r.scene.size()},
          {"frames", data.frames.size()},
          {"iterations", cfg.iterations},
          {"initial_loss", r.loss_trace.empty() ? json(nullptr) : json(r.loss_trace.front())},
          {"final_loss", r.loss_trace.empty() ? json(nullptr) : json(r.loss_trace.back())},
          {"best_loss", r.best_loss},
          {"best_iteration", r.best_iteration},
          {"seconds", seconds_since(start)}};
}

// ---- prune -----------------------------------------------------------------

struct PruneArgs {
  std::string grids, out, scene, channels;
  int S = 10;
  int patch_size = 0;
  bool apply = false;
  std::uint64_t seed = 0;
};

// {"patch_size": p, "grids": [[v, ...], ...]}, each grid patch-major.
std::vector<PatchOpacityGrid> read_grids(const fs::path& path) {
  const json j = load_json_file(path);
  const int p = j.at("patch_size").get<int>();
  if (p < 1) throw DomainError("grids: patch_size must be positive");
  std::vector<PatchOpacityGrid> grids;
  for (const json& g : j.at("grids")) {
    PatchOpacityGrid grid;
    grid.patch_size = p;
    grid.values = g.get<std::vector<double>>();
    if (grid.values.size() % static_cast<std::size_t>(p * p) != 0) {
      throw DomainError("grids: grid " + std::to_string(grids.size()) +
                        " length is not a multiple of patch_size^2");
    }
    grids.push_back(std::move(grid));
  }
  return grids;
}

json cmd_prune_select(const PruneArgs& a) {
  const std::vector<PatchOpacityGrid> grids = read_grids(a.grids);
  const ActivationHistogram h = aggregate_histogram(grids);
  const std::vector<int> channels = select_channels(h, a.S);
  write_file_atomic(a.out, channels_to_json(channels));
  const PruningComparison cmp = compare_pruning_strategies(grids, a.S, a.seed);
  return {{"command", "prune"},
          {"out", a.out},
          {"channels", channels},
          {"histogram", h.counts},
          {"total_patches", h.total_patches},
          {"kept_activation",
           {{"histogram", cmp.histogram_kept_activation},
            {"random", cmp.random_kept_activation},
            {"uniform", cmp.uniform_kept_activation}}}};
}

json cmd_prune_apply(const PruneArgs& a) {
  const GaussianScene scene = read_scene(a.scene);
  const std::vector<int> channels = channels_from_json(read_file(a.channels));
  const GaussianScene pruned = apply_pruning(scene, a.patch_size, channels);
  write_scene(pruned, a.out);
  return {{"command", "prune"},
          {"apply", true},
          {"out", a.out},
          {"gaussians_before", scene.size()},
          {"gaussians_after", pruned.size()}};
}

// ---- schedule --------------------------------------------------------------

struct ScheduleArgs {
  std::int64_t frames = 64, chunks = 4, tokens_per_frame = 1296;
  int levels = 3;
};

json cmd_schedule(const ScheduleArgs& a) {
  const TokenLayout layout = build_layout(a.frames, a.chunks, a.levels, a.tokens_per_frame);
  const CostReport cost = attention_cost(layout);
  json levels = json::array();
  for (std::size_t l = 0; l < layout.per_level.size(); ++l) {
    const LevelLayout& ll = layout.per_level[l];
    levels.push_back({{"level", ll.level},
                      {"chunks", ll.chunk_count},
                      {"frames_per_chunk", ll.frames_per_chunk},
                      {"tokens_per_frame", ll.tokens_per_frame},
                      {"tokens_per_chunk", ll.tokens_per_chunk},
                      {"pairs", cost.per_level[l]}});
  }
  return {{"command", "schedule"},
          {"frames", layout.frames},
          {"chunks", layout.chunks},
          {"levels", layout.levels},
          {"tokens_per_frame", layout.tokens_per_frame},
          {"total_tokens", layout.total_tokens},
          {"per_level", levels},
          {"pairs_total", cost.total},
          {"pairs_baseline", cost.baseline},
          {"ratio", cost.ratio},
          {"ratio_fraction",
           std::to_string(cost.ratio_numerator) + "/" + std::to_string(cost.ratio_denominator)}};
}

// ---- metrics ---------------------------------------------------------------

struct MetricsArgs {
  std::string pred, target, mask;
  bool depth = false, normal = false;
};

bool is_color_file(const fs::path& p) {
  return p.extension() == ".ppm" && p.stem().extension().empty();
}

json cmd_metrics(const MetricsArgs& a) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a.target)) {
    if (e.is_regular_file() && is_color_file(e.path())) names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("metrics: no .ppm images in " + a.target);

  const auto load = [](const std::string& dir, const std::string& file) {
    const fs::path p = fs::path(dir) / file;
    if (!fs::exists(p)) throw std::runtime_error("metrics: missing " + p.string());
    return read_image(p);
  };

  json frames = json::array();
  double sum_psnr = 0, sum_ssim = 0, sum_depth = 0, sum_normal = 0;
  for (const std::string& name : names) {
    const Image pred = load(a.pred, name + ".ppm");
    const Image target = load(a.target, name + ".ppm");
    if (!pred.same_shape(target)) throw DomainError("metrics: shape mismatch for " + name);
    std::optional<Image> mask;
    if (!a.mask.empty()) mask = load(a.mask, name + ".mask.pfm");
    json f{{"name", name}, {"psnr", psnr(pred, target)}, {"ssim", ssim(pred, target)}};
    sum_psnr += f["psnr"].get<double>();
    sum_ssim += f["ssim"].get<double>();
    if (a.depth) {
      const double d = depth_rmse(load(a.pred, name + ".depth.pfm"),
                                  load(a.target, name + ".depth.pfm"), mask);
      f["depth_rmse"] = d;
      sum_depth += d;
    }
    if (a.normal) {
      const double n = normal_angle_deg(load(a.pred, name + ".normal.pfm"),
                                        load(a.target, name + ".normal.pfm"), mask);
      f["normal_angle_deg"] = n;
      sum_normal += n;
    }
    frames.push_back(f);
  }
  const double n = static_cast<double>(names.size());
  json mean{{"psnr", sum_psnr / n}, {"ssim", sum_ssim / n}};
  if (a.depth) mean["depth_rmse"] = sum_depth / n;
  if (a.normal) mean["normal_angle_deg"] = sum_normal / n;
  json out{{"command", "metrics"}, {"count", names.size()}, {"frames", frames}};
  for (auto& [k, v] : mean.items()) out[k] = v;
  return out;
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string scene, manifest;
  int repeat = 1;
  int threads = 0;
};

json cmd_bench(const BenchArgs& a) {
  auto t0 = Clock::now();
  const GaussianScene scene = read_scene(a.scene);
  const LoadedDataset data = load_manifest(a.manifest);
  const double load_s = seconds_since(t0);
  RenderConfig cfg;
  cfg.threads = a.threads;

  double evaluate_s = 0, render_s = 0, flow_s = 0, metrics_s = 0;
  double psnr_sum = 0;
  std::size_t rendered = 0;
  for (int r = 0; r < a.repeat; ++r) {
    for (std::size_t i = 0; i < data.frames.size(); ++i) {
      const Frame& f = data.frames[i];
      const double t = f.timestamp - scene.time_base;
      t0 = Clock::now();
      const auto snaps = evaluate_at_time(scene, t);
      evaluate_s += seconds_since(t0);
      t0 = Clock::now();
      const RenderOutput out = render(scene, f.intrinsics, f.pose, t, cfg);
      render_s += seconds_since(t0);
      if (i + 1 < data.frames.size()) {
        t0 = Clock::now();
        render_flow(scene, f.intrinsics, f.pose, t, data.frames[i + 1].timestamp - scene.time_base,
                    cfg);
        flow_s += seconds_since(t0);
      }
      t0 = Clock::now();
      if (out.color.same_shape(f.image)) psnr_sum += psnr(out.color, f.image);
      metrics_s += seconds_since(t0);
      ++rendered;
      (void)snaps;
    }
  }
  const auto ms = [](double s) { return 1e3 * s; };
  return {{"command", "bench"},
          {"gaussians", scene.size()},
          {"frames", rendered},
          {"frames_per_second", render_s > 0 ? rendered / render_s : 0.0},
          {"mean_psnr", rendered ? psnr_sum / rendered : 0.0},
          {"stages_ms",
           {{"load", ms(load_s)},
            {"evaluate", ms(evaluate_s)},
            {"render", ms(render_s)},
            {"flow", ms(flow_s)},
            {"metrics", ms(metrics_s)}}},
          {"per_frame_ms", rendered ? ms(render_s) / rendered : 0.0}};
}

void fail_json(const std::string& kind, const std::string& message, int code) {
  std::cerr << "gs4d: " << message << std::endl;
  emit({{"error", kind}, {"message", message}, {"exit_code", code}});
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"4D Gaussian scene engine", "gs4d"};
  app.require_subcommand(1);

  RenderArgs ra;
  auto* render_cmd = app.add_subcommand("render", "Render a scene from every manifest camera");
  render_cmd->add_option("--scene", ra.scene, "Scene file")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--manifest", ra.manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  render_cmd->add_option("--time", ra.time, "Global timestamp (s)")->required();
  render_cmd->add_option("--out", ra.out, "Output directory")->required();
  render_cmd->add_option_function<double>(
      "--flow", [&](double t) { ra.flow_until = t; }, "Also render flow toward this time");
  render_cmd->add_flag("--dyn-mask", ra.dyn_mask, "Also render the dynamic mask");

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a scene to a manifest");
  fit_cmd->add_option("--manifest", fa.manifest)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--init", fa.init, "Initial scene")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--config", fa.config, "Fit config JSON")->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fa.out, "Fitted scene")->required();

  PruneArgs pa;
  auto* prune_cmd = app.add_subcommand("prune", "Select or apply pruning channels");
  auto* grids_opt = prune_cmd->add_option("--grids", pa.grids, "Opacity grids JSON")
                        ->check(CLI::ExistingFile);
  prune_cmd->add_option("--S", pa.S, "Channels kept per patch")->check(CLI::PositiveNumber);
  prune_cmd->add_option("--seed", pa.seed, "Seed of the random baseline");
  auto* out_opt = prune_cmd->add_option("--out", pa.out, "Channels JSON or pruned scene")->required();
  auto* apply_flag = prune_cmd->add_flag("--apply", pa.apply, "Apply channels to a scene");
  auto* scene_opt =
      prune_cmd->add_option("--scene", pa.scene, "Patch-major scene")->check(CLI::ExistingFile);
  auto* channels_opt =
      prune_cmd->add_option("--channels", pa.channels, "Channels JSON")->check(CLI::ExistingFile);
  auto* patch_opt =
      prune_cmd->add_option("--patch-size", pa.patch_size, "Patch size p")->check(CLI::PositiveNumber);
  (void)out_opt;

  ScheduleArgs sa;
  auto* schedule_cmd = app.add_subcommand("schedule", "Token layout and attention cost");
  schedule_cmd->add_option("--frames", sa.frames)->required()->check(CLI::PositiveNumber);
  schedule_cmd->add_option("--chunks", sa.chunks)->required()->check(CLI::PositiveNumber);
  schedule_cmd->add_option("--levels", sa.levels)->required()->check(CLI::PositiveNumber);
  schedule_cmd->add_option("--tokens-per-frame", sa.tokens_per_frame)
      ->required()
      ->check(CLI::PositiveNumber);

  MetricsArgs ma;
  auto* metrics_cmd = app.add_subcommand("metrics", "Compare rendered and target directories");
  metrics_cmd->add_option("--pred", ma.pred)->required()->check(CLI::ExistingDirectory);
  metrics_cmd->add_option("--target", ma.target)->required()->check(CLI::ExistingDirectory);
  metrics_cmd->add_flag("--depth", ma.depth, "Compare NAME.depth.pfm");
  metrics_cmd->add_flag("--normal", ma.normal, "Compare NAME.normal.pfm");
  metrics_cmd->add_option("--mask", ma.mask, "Directory of NAME.mask.pfm")
      ->check(CLI::ExistingDirectory);

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Rendering throughput and stage timings");
  bench_cmd->add_option("--scene", ba.scene)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--manifest", ba.manifest)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--repeat", ba.repeat)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--threads", ba.threads)->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
    if (*prune_cmd) {
      if (pa.apply) {
        if (!*scene_opt || !*channels_opt || !*patch_opt) {
          throw CLI::ValidationError("prune --apply",
                                     "requires --scene, --channels and --patch-size");
        }
      } else if (!*grids_opt) {
        throw CLI::RequiredError("--grids");
      }
    }
    (void)apply_flag;
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    fail_json("usage", e.what(), kExitUsage);
    return kExitUsage;
  }

  try {
    json result;
    if (*render_cmd) result = cmd_render(ra);
    else if (*fit_cmd) result = cmd_fit(fa);
    else if (*prune_cmd) result = pa.apply ? cmd_prune_apply(pa) : cmd_prune_select(pa);
    else if (*schedule_cmd) result = cmd_schedule(sa);
    else if (*metrics_cmd) result = cmd_metrics(ma);
    else if (*bench_cmd) result = cmd_bench(ba);
    emit(result);
    return kExitOk;
  } catch (const std::exception& e) {
    fail_json("runtime", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

}  // namespace gs4d::cli
