#pragma once

// Shared by the forward rasterizer and the gradient pass in fitting.cpp so both
// see identical culling, binning, ordering and early termination.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "gs4d/rasterizer.hpp"
#include "parallel.hpp"

namespace gs4d::detail {

struct PreparedSurfel {
  SurfelSnapshot snap;
  Mat3 rot;           // columns: tangent u, tangent v, normal
  double view_depth;  // camera-space z of the center
  bool dynamic = false;
  Vec2 flow = Vec2::Zero();
};

struct ViewPlan {
  int width = 0;
  int height = 0;
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<PreparedSurfel> surfels;  // one per scene Gaussian
  std::vector<std::uint32_t> order;     // visible Gaussians sorted by view depth
  std::vector<std::vector<std::uint32_t>> tile_lists;

  const std::vector<std::uint32_t>& tile_for(int px, int py) const {
    return tile_lists[static_cast<std::size_t>(py / tile_size) * tiles_x + px / tile_size];
  }
};

PreparedSurfel prepare_surfel(const GaussianScene& scene, std::size_t i,
                              const CameraIntrinsics& intr, const CameraPose& pose, double t,
                              const RenderConfig& cfg, std::optional<double> flow_until);

ViewPlan plan_view(const GaussianScene& scene, const CameraIntrinsics& intr,
                   const CameraPose& pose, double t, const RenderConfig& cfg,
                   std::optional<double> flow_until);

/// Shades every pixel of a prepared view (the body of render()).
RenderOutput render_with_plan(const ViewPlan& plan, const CameraIntrinsics& intr,
                              const CameraPose& pose, const RenderConfig& cfg);

/// Ray/plane hit against a surfel whose rotation has already been expanded.
inline std::optional<SurfelHit> intersect_frame(const Vec3& center, const Mat3& rot,
                                               const Vec2& scale, const Vec3& origin,
                                               const Vec3& dir) {
  const Vec3 n = rot.col(2);
  const double denom = dir.dot(n);
  if (std::abs(denom) < 1e-9) return std::nullopt;
  const double lambda = (center - origin).dot(n) / denom;
  if (!(lambda > 0.0)) return std::nullopt;
  const Vec3 delta = origin + lambda * dir - center;
  return SurfelHit{delta.dot(rot.col(0)) / scale.x(), delta.dot(rot.col(1)) / scale.y(), lambda};
}

inline Vec3 facing_normal(const Vec3& n, const Vec3& ray_dir) {
  return n.dot(ray_dir) > 0.0 ? Vec3(-n) : n;
}

/// Front-to-back loop over an ordered candidate list. visit(index, hit, alpha,
/// transmittance_before) is called for every contributing Gaussian. Returns the
/// final transmittance.
template <class Visit>
double composite_ray(const std::vector<PreparedSurfel>& surfels,
                     const std::vector<std::uint32_t>& candidates, const Ray& ray,
                     const RenderConfig& cfg, Visit&& visit) {
  double transmittance = 1.0;
  for (const std::uint32_t idx : candidates) {
    const PreparedSurfel& ps = surfels[idx];
    const auto hit = intersect_frame(ps.snap.position, ps.rot, ps.snap.scale, ray.origin,
                                     ray.direction);
    if (!hit) continue;
    const double alpha = splat_alpha(hit->u, hit->v, ps.snap.opacity, cfg);
    if (alpha <= 0.0) continue;
    visit(idx, *hit, alpha, transmittance);
    transmittance *= 1.0 - alpha;
    if (transmittance < cfg.transmittance_floor) break;
  }
  return transmittance;
}

}  // namespace gs4d::detail
