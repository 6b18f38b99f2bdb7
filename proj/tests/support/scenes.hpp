#pragma once

// Random scene and frame generators shared by the unit and acceptance tests.

#include <cmath>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

#include "gs4d/core_model.hpp"
#include "gs4d/fitting.hpp"
#include "gs4d/rasterizer.hpp"

namespace gs4d::testing {

inline CameraIntrinsics square_camera(int size, double focal) {
  CameraIntrinsics intr;
  intr.width = size;
  intr.height = size;
  intr.fx = focal;
  intr.fy = focal;
  intr.cx = 0.5 * size;
  intr.cy = 0.5 * size;
  return intr;
}

struct LayeredSceneOptions {
  int count = 64;
  double z_near = 2.0;
  double layer_gap = 0.05;
  double max_tilt = 0.05;     // radians
  double min_scale = 0.04;
  double max_scale = 0.15;
  double field_of_view = 0.5;  // |x|, |y| <= fov * z
  double max_speed = 0.0;     // in-plane velocity magnitude bound
  double max_spin = 0.0;      // angular speed about the surfel normal
  double lifespan = 1e6;
};

/// Surfels that stay in disjoint camera-z slabs for an identity-pose camera,
/// so per-pixel ray depth order and center-z order agree. Motion is restricted
/// to the image plane and spin about the normal, keeping the slabs intact.
inline GaussianScene layered_scene(std::mt19937_64& rng, const LayeredSceneOptions& opt) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  GaussianScene scene;
  for (int i = 0; i < opt.count; ++i) {
    Gaussian4D g;
    const double z = opt.z_near + opt.layer_gap * i;
    g.position = Vec3(uniform(-opt.field_of_view, opt.field_of_view) * z,
                      uniform(-opt.field_of_view, opt.field_of_view) * z, z);
    g.scale = Vec2(uniform(opt.min_scale, opt.max_scale), uniform(opt.min_scale, opt.max_scale));
    const double tilt = uniform(0.0, opt.max_tilt);
    const double heading = uniform(0.0, 2.0 * std::numbers::pi);
    const double spin = uniform(0.0, 2.0 * std::numbers::pi);
    // Spin about z first, then tilt the normal slightly off the view axis.
    g.orientation =
        axis_angle_to_quat(Vec3(std::cos(heading), std::sin(heading), 0.0) * tilt) *
        axis_angle_to_quat(Vec3(0.0, 0.0, spin));
    g.opacity = uniform(0.3, 0.95);
    g.color = Vec3(uniform(0.05, 0.95), uniform(0.05, 0.95), uniform(0.05, 0.95));
    g.t_center = uniform(-0.5, 0.5);
    g.lifespan = opt.lifespan;
    const double heading_v = uniform(0.0, 2.0 * std::numbers::pi);
    g.velocity = Vec3(std::cos(heading_v), std::sin(heading_v), 0.0) * uniform(0.0, opt.max_speed);
    g.ang_velocity = Vec3(0.0, 0.0, uniform(-opt.max_spin, opt.max_spin));
    scene.push_back(g);
  }
  return scene;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

inline double max_abs_diff(const RenderOutput& a, const RenderOutput& b) {
  return std::max({max_abs_diff(a.color, b.color), max_abs_diff(a.alpha, b.alpha),
                   max_abs_diff(a.depth, b.depth), max_abs_diff(a.normal, b.normal),
                   max_abs_diff(a.flow, b.flow), max_abs_diff(a.dynamic_mask, b.dynamic_mask)});
}

/// A frame whose image, depth and normal targets are the render of `scene`.
inline Frame rendered_frame(const GaussianScene& scene, const CameraIntrinsics& intr,
                            const CameraPose& pose, double t, const RenderConfig& cfg,
                            bool with_geometry) {
  const RenderOutput out = render(scene, intr, pose, t, cfg);
  Frame f;
  f.image = out.color;
  f.intrinsics = intr;
  f.pose = pose;
  f.timestamp = t;
  if (with_geometry) {
    f.depth_target = out.depth;
    f.normal_target = out.normal;
  }
  return f;
}

/// Outcome of comparing analytic and central-difference gradients.
struct GradientAgreement {
  std::size_t checked = 0;
  std::size_t agreeing = 0;
  std::size_t excluded = 0;  // stencil crosses a compositing discontinuity
  double fraction() const { return checked == 0 ? 1.0 : double(agreeing) / double(checked); }
};

inline bool gradients_agree(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag > 0.0 && diff / mag < 1e-3) return true;
  return mag < 1e-4 && diff < 1e-6;
}

/// Compares every coordinate of pv; coordinates whose +-h stencil changes the
/// set of contributing splats (cutoff, clamp or facing boundaries) are excluded.
inline GradientAgreement check_gradient(const ParamVector& pv, std::span<const Frame> frames,
                                        const FitConfig& cfg, int step) {
  const LossAndGrad lg = loss_and_grad(pv, frames, cfg, step);
  const std::uint64_t base = discontinuity_signature(pv, frames, cfg);
  GradientAgreement result;
  for (std::size_t i = 0; i < pv.values.size(); ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(pv.values[i]));
    ParamVector probe = pv;
    probe.values[i] = pv.values[i] + h;
    const bool smooth_plus = discontinuity_signature(probe, frames, cfg) == base;
    probe.values[i] = pv.values[i] - h;
    const bool smooth_minus = discontinuity_signature(probe, frames, cfg) == base;
    if (!smooth_plus || !smooth_minus) {
      ++result.excluded;
      continue;
    }
    const std::size_t idx[1] = {i};
    const double numeric = finite_diff_grad(pv, frames, cfg, step, idx)[0];
    ++result.checked;
    if (gradients_agree(lg.gradient.values[i], numeric)) ++result.agreeing;
  }
  return result;
}

/// Camera at the origin looking down +z, slightly rotated per index.
inline CameraPose jittered_pose(std::mt19937_64& rng, double max_angle, double max_shift) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CameraPose pose;
  pose.rotation = axis_angle_to_quat(Vec3(u(rng), u(rng), u(rng)) * max_angle);
  pose.translation = Vec3(u(rng), u(rng), u(rng)) * max_shift;
  return pose;
}

/// Cameras on the x axis at the given offsets, each turned toward (0, 0, depth).
inline std::vector<CameraPose> converging_rig(std::initializer_list<double> offsets, double depth) {
  std::vector<CameraPose> rig;
  for (double b : offsets) {
    CameraPose pose;
    pose.translation = Vec3(b, 0.0, 0.0);
    pose.rotation = axis_angle_to_quat(Vec3(0.0, -std::atan2(b, depth), 0.0));
    rig.push_back(pose);
  }
  return rig;
}

}  // namespace gs4d::testing
