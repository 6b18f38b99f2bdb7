#include "gs4d/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gs4d {

Gaussian4D sanitized(Gaussian4D g) {
  g.orientation = g.orientation.normalized();
  g.opacity = std::clamp(g.opacity, 0.0, 1.0);
  g.scale = g.scale.cwiseMax(kMinScale);
  g.lifespan = std::max(g.lifespan, kMinLifespan);
  return g;
}

void GaussianScene::reserve(std::size_t n) {
  position.reserve(n);
  scale.reserve(n);
  orientation.reserve(n);
  opacity.reserve(n);
  color.reserve(n);
  t_center.reserve(n);
  lifespan.reserve(n);
  velocity.reserve(n);
  ang_velocity.reserve(n);
}

void GaussianScene::resize(std::size_t n) {
  const Gaussian4D d;
  position.resize(n, d.position);
  scale.resize(n, d.scale);
  orientation.resize(n, d.orientation);
  opacity.resize(n, d.opacity);
  color.resize(n, d.color);
  t_center.resize(n, d.t_center);
  lifespan.resize(n, d.lifespan);
  velocity.resize(n, d.velocity);
  ang_velocity.resize(n, d.ang_velocity);
}

void GaussianScene::push_back(const Gaussian4D& raw) {
  const Gaussian4D g = sanitized(raw);
  position.push_back(g.position);
  scale.push_back(g.scale);
  orientation.push_back(g.orientation);
  opacity.push_back(g.opacity);
  color.push_back(g.color);
  t_center.push_back(g.t_center);
  lifespan.push_back(g.lifespan);
  velocity.push_back(g.velocity);
  ang_velocity.push_back(g.ang_velocity);
}

Gaussian4D GaussianScene::get(std::size_t i) const {
  return {position[i], scale[i],    orientation[i], opacity[i],     color[i],
          t_center[i], lifespan[i], velocity[i],    ang_velocity[i]};
}

void GaussianScene::set(std::size_t i, const Gaussian4D& raw) {
  const Gaussian4D g = sanitized(raw);
  position[i] = g.position;
  scale[i] = g.scale;
  orientation[i] = g.orientation;
  opacity[i] = g.opacity;
  color[i] = g.color;
  t_center[i] = g.t_center;
  lifespan[i] = g.lifespan;
  velocity[i] = g.velocity;
  ang_velocity[i] = g.ang_velocity;
}

bool GaussianScene::consistent() const {
  const std::size_t n = position.size();
  return scale.size() == n && orientation.size() == n && opacity.size() == n &&
         color.size() == n && t_center.size() == n && lifespan.size() == n &&
         velocity.size() == n && ang_velocity.size() == n;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw DomainError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) {
    throw DomainError("image size must be positive, got " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
}

Vec3 CameraPose::to_camera(const Vec3& p_world) const {
  return rotation.to_rotation().transpose() * (p_world - translation);
}

double temporal_sigma(double lifespan, double o_th) {
  if (!(lifespan > 0.0)) throw DomainError("lifespan must be positive");
  if (!(o_th > 0.0 && o_th < 1.0)) throw DomainError("o_th must lie in (0, 1)");
  const double half = 0.5 * lifespan;
  return std::sqrt(-(half * half) / (2.0 * std::log(o_th)));
}

double opacity_at(const Gaussian4D& g, double t, double o_th) {
  const double sigma = temporal_sigma(g.lifespan, o_th);
  const double dt = t - g.t_center;
  return g.opacity * std::exp(-0.5 * (dt * dt) / (sigma * sigma));
}

Vec3 position_at(const Gaussian4D& g, double t) {
  return g.position + g.velocity * (t - g.t_center);
}

Quat axis_angle_to_quat(const Vec3& a) {
  const double theta = a.norm();
  if (theta < 1e-8) {
    return Quat{1.0, 0.5 * a.x(), 0.5 * a.y(), 0.5 * a.z()}.normalized();
  }
  const double s = std::sin(0.5 * theta) / theta;
  return {std::cos(0.5 * theta), s * a.x(), s * a.y(), s * a.z()};
}

Quat orientation_at(const Gaussian4D& g, double t) {
  const Quat q = g.orientation.normalized();
  if (g.ang_velocity.isZero(0.0)) return q;
  return (q * axis_angle_to_quat(g.ang_velocity * (t - g.t_center))).normalized();
}

SurfelSnapshot snapshot_at(const Gaussian4D& g, double t, double o_th) {
  SurfelSnapshot s;
  s.position = position_at(g, t);
  s.orientation = orientation_at(g, t);
  s.opacity = opacity_at(g, t, o_th);
  s.scale = g.scale;
  s.color = g.color;
  s.normal = s.orientation.to_rotation().col(2).normalized();
  return s;
}

std::vector<SurfelSnapshot> evaluate_at_time(const GaussianScene& scene, double t, double o_th) {
  if (!scene.consistent()) throw DomainError("scene field arrays differ in length");
  std::vector<SurfelSnapshot> out;
  out.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) out.push_back(snapshot_at(scene.get(i), t, o_th));
  return out;
}

Ray pixel_ray(const CameraIntrinsics& intr, const CameraPose& pose, int px, int py) {
  const Vec3 d_cam((px + 0.5 - intr.cx) / intr.fx, (py + 0.5 - intr.cy) / intr.fy, 1.0);
  return {pose.center(), (pose.rotation.to_rotation() * d_cam).normalized()};
}

std::optional<Vec2> project(const CameraIntrinsics& intr, const CameraPose& pose,
                            const Vec3& p_world) {
  const Vec3 pc = pose.to_camera(p_world);
  if (!(pc.z() > 0.0)) return std::nullopt;
  return Vec2(intr.fx * pc.x() / pc.z() + intr.cx - 0.5, intr.fy * pc.y() / pc.z() + intr.cy - 0.5);
}

PluckerImage plucker_rays(const CameraIntrinsics& intr, const CameraPose& pose) {
  intr.validate();
  PluckerImage out(intr.width, intr.height, 6);
  const Mat3 r = pose.rotation.to_rotation();
  const Vec3 o = pose.center();
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const Vec3 d_cam((u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy, 1.0);
      const Vec3 d = (r * d_cam).normalized();
      const Vec3 m = o.cross(d);
      auto px = out.pixel(u, v);
      for (int k = 0; k < 3; ++k) {
        px[k] = d[k];
        px[3 + k] = m[k];
      }
    }
  }
  return out;
}

}  // namespace gs4d
