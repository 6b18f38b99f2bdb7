#pragma once

// Tile-based front-to-back surfel rasterizer and its brute-force reference.

#include <optional>

#include "gs4d/core_model.hpp"
#include "gs4d/image.hpp"

namespace gs4d {

struct RenderConfig {
  int tile_size = 16;
  double sigma_cutoff = 3.0;
  double transmittance_floor = 1e-4;
  double alpha_clamp = 0.999;
  /// Speed (world units / s) above which a Gaussian counts as dynamic.
  double dyn_velocity_threshold = 0.05;
  /// Lifespan (s) below which a Gaussian counts as dynamic. Callers rendering
  /// a rolling window should set this to half the window duration.
  double dyn_lifespan_threshold = 2.0;
  Vec3 background = Vec3::Zero();
  double o_th = kOpacityThreshold;
  /// Worker threads; 0 picks the hardware concurrency. Output does not depend on it.
  int threads = 0;

  void validate() const;
};

struct RenderOutput {
  Image color;         // H x W x 3
  Image alpha;         // H x W x 1
  Image depth;         // H x W x 1, distance along the pixel ray, 0 where alpha = 0
  Image normal;        // H x W x 3, world space, camera facing
  Image flow;          // H x W x 2 pixels; zero unless flow was requested
  Image dynamic_mask;  // H x W x 1
};

/// Ray/surfel-plane hit in the surfel's tangent frame (u, v in units of scale)
/// and the distance along the ray.
struct SurfelHit {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

std::optional<SurfelHit> intersect_surfel(const SurfelSnapshot& s, const Vec3& ray_origin,
                                          const Vec3& ray_dir);

/// min(alpha_clamp, opacity * exp(-(u^2 + v^2) / 2)), zero beyond the sigma cutoff.
double splat_alpha(double u, double v, double opacity_t, const RenderConfig& cfg);

/// Renders color/alpha/depth/normal/dynamic-mask at time t. When flow_until is
/// set, the flow plane holds the composited screen displacement from t to *flow_until.
RenderOutput render(const GaussianScene& scene, const CameraIntrinsics& intr,
                    const CameraPose& pose, double t, const RenderConfig& cfg = {},
                    std::optional<double> flow_until = std::nullopt);

/// Per-pixel exhaustive reference: every Gaussian is intersected with every
/// pixel ray and the hits are sorted by ray depth.
RenderOutput render_oracle(const GaussianScene& scene, const CameraIntrinsics& intr,
                           const CameraPose& pose, double t, const RenderConfig& cfg = {},
                           std::optional<double> flow_until = std::nullopt);

Image render_flow(const GaussianScene& scene, const CameraIntrinsics& intr,
                  const CameraPose& pose, double t0, double t1, const RenderConfig& cfg = {});

Image render_dynamic_mask(const GaussianScene& scene, const CameraIntrinsics& intr,
                          const CameraPose& pose, double t, const RenderConfig& cfg = {});

/// Whether a Gaussian counts as dynamic for the dynamic mask.
bool is_dynamic(const Vec3& velocity, double lifespan, const RenderConfig& cfg);

}  // namespace gs4d
