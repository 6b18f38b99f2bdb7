#include "gs4d/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "raster_internal.hpp"

namespace gs4d {

void RenderConfig::validate() const {
  if (tile_size < 1) throw DomainError("tile_size must be >= 1");
  if (!(sigma_cutoff > 0.0) || !(transmittance_floor > 0.0) || !(alpha_clamp > 0.0) ||
      alpha_clamp > 1.0) {
    throw DomainError("render thresholds must be positive (alpha_clamp <= 1)");
  }
  if (!(dyn_velocity_threshold > 0.0) || !(dyn_lifespan_threshold > 0.0)) {
    throw DomainError("dynamic-mask thresholds must be positive");
  }
}

std::optional<SurfelHit> intersect_surfel(const SurfelSnapshot& s, const Vec3& ray_origin,
                                          const Vec3& ray_dir) {
  return detail::intersect_frame(s.position, s.orientation.to_rotation(), s.scale, ray_origin,
                                 ray_dir);
}

double splat_alpha(double u, double v, double opacity_t, const RenderConfig& cfg) {
  const double r2 = u * u + v * v;
  if (r2 > cfg.sigma_cutoff * cfg.sigma_cutoff) return 0.0;
  return std::min(cfg.alpha_clamp, opacity_t * std::exp(-0.5 * r2));
}

bool is_dynamic(const Vec3& velocity, double lifespan, const RenderConfig& cfg) {
  return velocity.norm() > cfg.dyn_velocity_threshold || lifespan < cfg.dyn_lifespan_threshold;
}

namespace detail {

PreparedSurfel prepare_surfel(const GaussianScene& scene, std::size_t i,
                              const CameraIntrinsics& intr, const CameraPose& pose, double t,
                              const RenderConfig& cfg, std::optional<double> flow_until) {
  const Gaussian4D g = scene.get(i);
  PreparedSurfel ps;
  ps.snap = snapshot_at(g, t, cfg.o_th);
  ps.rot = ps.snap.orientation.to_rotation();
  ps.snap.normal = ps.rot.col(2);
  ps.view_depth = pose.to_camera(ps.snap.position).z();
  ps.dynamic = is_dynamic(g.velocity, g.lifespan, cfg);
  if (flow_until) {
    const auto p0 = project(intr, pose, ps.snap.position);
    const auto p1 = project(intr, pose, position_at(g, *flow_until));
    if (p0 && p1) ps.flow = *p1 - *p0;
  }
  return ps;
}

namespace {

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive
};

// Conservative screen-space bounds of the cutoff rectangle around a surfel, or
// empty when the rectangle lies entirely behind the camera.
std::optional<PixelBox> footprint(const PreparedSurfel& ps, const CameraIntrinsics& intr,
                                  const CameraPose& pose, double cutoff) {
  const Vec3 a = cutoff * ps.snap.scale.x() * ps.rot.col(0);
  const Vec3 b = cutoff * ps.snap.scale.y() * ps.rot.col(1);
  const std::array<Vec3, 4> corners = {ps.snap.position + a + b, ps.snap.position + a - b,
                                       ps.snap.position - a + b, ps.snap.position - a - b};
  double zmin = std::numeric_limits<double>::infinity();
  double zmax = -zmin;
  std::array<Vec3, 4> cam;
  for (int k = 0; k < 4; ++k) {
    cam[k] = pose.to_camera(corners[k]);
    zmin = std::min(zmin, cam[k].z());
    zmax = std::max(zmax, cam[k].z());
  }
  if (!(zmax > 0.0)) return std::nullopt;
  const PixelBox full{0, 0, intr.width - 1, intr.height - 1};
  if (!(zmin > 1e-9)) return full;
  double umin = std::numeric_limits<double>::infinity(), vmin = umin;
  double umax = -umin, vmax = -umin;
  for (const Vec3& c : cam) {
    const double u = intr.fx * c.x() / c.z() + intr.cx - 0.5;
    const double v = intr.fy * c.y() / c.z() + intr.cy - 0.5;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (!std::isfinite(umin + umax + vmin + vmax)) return full;
  const auto lo = [](double x, int limit) {
    return static_cast<int>(std::clamp(std::floor(x) - 1.0, -1.0, static_cast<double>(limit)));
  };
  const auto hi = [](double x, int limit) {
    return static_cast<int>(std::clamp(std::ceil(x) + 1.0, -1.0, static_cast<double>(limit)));
  };
  PixelBox box{std::max(lo(umin, intr.width), 0), std::max(lo(vmin, intr.height), 0),
               std::min(hi(umax, intr.width), intr.width - 1),
               std::min(hi(vmax, intr.height), intr.height - 1)};
  if (box.x0 > box.x1 || box.y0 > box.y1) return PixelBox{0, 0, -1, -1};
  return box;
}

}  // namespace

ViewPlan plan_view(const GaussianScene& scene, const CameraIntrinsics& intr,
                   const CameraPose& pose, double t, const RenderConfig& cfg,
                   std::optional<double> flow_until) {
  ViewPlan plan;
  plan.width = intr.width;
  plan.height = intr.height;
  plan.tile_size = cfg.tile_size;
  plan.tiles_x = (intr.width + cfg.tile_size - 1) / cfg.tile_size;
  plan.tiles_y = (intr.height + cfg.tile_size - 1) / cfg.tile_size;
  plan.tile_lists.resize(static_cast<std::size_t>(plan.tiles_x) * plan.tiles_y);

  const std::size_t n = scene.size();
  plan.surfels.resize(n);
  std::vector<std::optional<PixelBox>> boxes(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    plan.surfels[i] = prepare_surfel(scene, i, intr, pose, t, cfg, flow_until);
    const PreparedSurfel& ps = plan.surfels[i];
    // Non-finite surfels are dropped; they would poison the sort and the tile bounds.
    if (ps.snap.opacity > 0.0 && std::isfinite(ps.view_depth) && ps.snap.position.allFinite() &&
        ps.rot.allFinite() && ps.snap.scale.allFinite()) {
      boxes[i] = footprint(plan.surfels[i], intr, pose, cfg.sigma_cutoff);
    }
  });

  for (std::uint32_t i = 0; i < n; ++i) {
    if (boxes[i] && boxes[i]->x0 <= boxes[i]->x1) plan.order.push_back(i);
  }
  std::stable_sort(plan.order.begin(), plan.order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return plan.surfels[a].view_depth < plan.surfels[b].view_depth;
  });

  for (const std::uint32_t i : plan.order) {
    const PixelBox& box = *boxes[i];
    const int tx0 = box.x0 / cfg.tile_size, tx1 = box.x1 / cfg.tile_size;
    const int ty0 = box.y0 / cfg.tile_size, ty1 = box.y1 / cfg.tile_size;
    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) {
        plan.tile_lists[static_cast<std::size_t>(ty) * plan.tiles_x + tx].push_back(i);
      }
    }
  }
  return plan;
}

}  // namespace detail

namespace {

RenderOutput allocate_output(const CameraIntrinsics& intr) {
  RenderOutput out;
  out.color = Image(intr.width, intr.height, 3);
  out.alpha = Image(intr.width, intr.height, 1);
  out.depth = Image(intr.width, intr.height, 1);
  out.normal = Image(intr.width, intr.height, 3);
  out.flow = Image(intr.width, intr.height, 2);
  out.dynamic_mask = Image(intr.width, intr.height, 1);
  return out;
}

struct Accumulator {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();
  double dynamic = 0.0;
  Vec2 flow = Vec2::Zero();
};

template <class Candidates>
void shade_pixel(const std::vector<detail::PreparedSurfel>& surfels, const Candidates& candidates,
                 const Ray& ray, const RenderConfig& cfg, RenderOutput& out, int px, int py) {
  Accumulator acc;
  const double t_final = detail::composite_ray(
      surfels, candidates, ray, cfg,
      [&](std::uint32_t idx, const SurfelHit& hit, double alpha, double transmittance) {
        const detail::PreparedSurfel& ps = surfels[idx];
        const double w = alpha * transmittance;
        acc.color += w * ps.snap.color;
        acc.depth += w * hit.depth;
        acc.normal += w * detail::facing_normal(ps.snap.normal, ray.direction);
        acc.dynamic += ps.dynamic ? w : 0.0;
        acc.flow += w * ps.flow;
      });
  const double alpha = 1.0 - t_final;
  const double inv = 1.0 / (alpha + 1e-10);
  const Vec3 color = acc.color + t_final * cfg.background;
  for (int c = 0; c < 3; ++c) out.color.at(px, py, c) = color[c];
  out.alpha.at(px, py) = alpha;
  out.depth.at(px, py) = acc.depth * inv;
  const double nn = acc.normal.norm();
  if (nn > 0.0) {
    for (int c = 0; c < 3; ++c) out.normal.at(px, py, c) = acc.normal[c] / nn;
  }
  out.dynamic_mask.at(px, py) = acc.dynamic * inv;
  out.flow.at(px, py, 0) = acc.flow.x() * inv;
  out.flow.at(px, py, 1) = acc.flow.y() * inv;
}

}  // namespace

namespace detail {

RenderOutput render_with_plan(const ViewPlan& plan, const CameraIntrinsics& intr,
                              const CameraPose& pose, const RenderConfig& cfg) {
  RenderOutput out = allocate_output(intr);
  parallel_for(plan.tile_lists.size(), cfg.threads, [&](std::size_t tile) {
    const int tx = static_cast<int>(tile % plan.tiles_x);
    const int ty = static_cast<int>(tile / plan.tiles_x);
    const auto& list = plan.tile_lists[tile];
    const int x_end = std::min((tx + 1) * cfg.tile_size, intr.width);
    const int y_end = std::min((ty + 1) * cfg.tile_size, intr.height);
    for (int py = ty * cfg.tile_size; py < y_end; ++py) {
      for (int px = tx * cfg.tile_size; px < x_end; ++px) {
        shade_pixel(plan.surfels, list, pixel_ray(intr, pose, px, py), cfg, out, px, py);
      }
    }
  });
  return out;
}

}  // namespace detail

RenderOutput render(const GaussianScene& scene, const CameraIntrinsics& intr,
                    const CameraPose& pose, double t, const RenderConfig& cfg,
                    std::optional<double> flow_until) {
  intr.validate();
  cfg.validate();
  const detail::ViewPlan plan = detail::plan_view(scene, intr, pose, t, cfg, flow_until);
  return detail::render_with_plan(plan, intr, pose, cfg);
}

RenderOutput render_oracle(const GaussianScene& scene, const CameraIntrinsics& intr,
                           const CameraPose& pose, double t, const RenderConfig& cfg,
                           std::optional<double> flow_until) {
  intr.validate();
  cfg.validate();
  RenderOutput out = allocate_output(intr);
  std::vector<detail::PreparedSurfel> surfels(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    surfels[i] = detail::prepare_surfel(scene, i, intr, pose, t, cfg, flow_until);
  }
  detail::parallel_for(static_cast<std::size_t>(intr.height), cfg.threads, [&](std::size_t row) {
    const int py = static_cast<int>(row);
    std::vector<std::pair<double, std::uint32_t>> hits;
    std::vector<std::uint32_t> sorted;
    for (int px = 0; px < intr.width; ++px) {
      const Ray ray = pixel_ray(intr, pose, px, py);
      hits.clear();
      for (std::uint32_t i = 0; i < surfels.size(); ++i) {
        const auto hit = intersect_surfel(surfels[i].snap, ray.origin, ray.direction);
        if (hit && std::isfinite(hit->depth)) hits.emplace_back(hit->depth, i);
      }
      std::stable_sort(hits.begin(), hits.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      sorted.clear();
      for (const auto& h : hits) sorted.push_back(h.second);
      shade_pixel(surfels, sorted, ray, cfg, out, px, py);
    }
  });
  return out;
}

Image render_flow(const GaussianScene& scene, const CameraIntrinsics& intr,
                  const CameraPose& pose, double t0, double t1, const RenderConfig& cfg) {
  return render(scene, intr, pose, t0, cfg, t1).flow;
}

Image render_dynamic_mask(const GaussianScene& scene, const CameraIntrinsics& intr,
                          const CameraPose& pose, double t, const RenderConfig& cfg) {
  return render(scene, intr, pose, t, cfg).dynamic_mask;
}

}  // namespace gs4d
