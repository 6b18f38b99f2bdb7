#pragma once

// Dynamic (4D) surfel Gaussians: representation, closed-form time evaluation,
// and pinhole camera / Plücker ray encodings.

#include <cstddef>
#include <optional>
#include <vector>

#include "gs4d/image.hpp"
#include "gs4d/math.hpp"

namespace gs4d {

/// Opacity multiplier at the lifespan boundary, c +- l/2.
inline constexpr double kOpacityThreshold = 0.05;
/// Lifespans are clamped to at least this many seconds so the temporal sigma stays positive.
inline constexpr double kMinLifespan = 1e-4;
inline constexpr double kMinScale = 1e-9;

struct Gaussian4D {
  Vec3 position = Vec3::Zero();
  Vec2 scale = Vec2::Ones();
  Quat orientation;
  double opacity = 1.0;
  Vec3 color = Vec3::Constant(0.5);
  double t_center = 0.0;
  double lifespan = 1.0;
  Vec3 velocity = Vec3::Zero();
  Vec3 ang_velocity = Vec3::Zero();
};

/// Returns g with orientation normalized and opacity, scale and lifespan
/// clamped into their valid ranges.
Gaussian4D sanitized(Gaussian4D g);

/// Structure-of-arrays set of Gaussian4D. All field arrays share one length.
struct GaussianScene {
  std::vector<Vec3> position;
  std::vector<Vec2> scale;
  std::vector<Quat> orientation;
  std::vector<double> opacity;
  std::vector<Vec3> color;
  std::vector<double> t_center;
  std::vector<double> lifespan;
  std::vector<Vec3> velocity;
  std::vector<Vec3> ang_velocity;
  /// Offset (seconds) from this scene's local clock to the global clock.
  double time_base = 0.0;

  std::size_t size() const { return position.size(); }
  bool empty() const { return position.empty(); }

  void reserve(std::size_t n);
  void resize(std::size_t n);
  /// Appends g after sanitizing it.
  void push_back(const Gaussian4D& g);
  Gaussian4D get(std::size_t i) const;
  void set(std::size_t i, const Gaussian4D& g);

  /// True when every field array has length size().
  bool consistent() const;
};

/// State of one Gaussian evaluated at a query timestamp.
struct SurfelSnapshot {
  Vec3 position = Vec3::Zero();
  Quat orientation;
  double opacity = 0.0;
  Vec2 scale = Vec2::Ones();
  Vec3 color = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws DomainError unless focal lengths and image size are positive.
  void validate() const;
};

/// World-from-camera rigid transform: p_world = R * p_cam + t.
struct CameraPose {
  Quat rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return translation; }
  Vec3 to_camera(const Vec3& p_world) const;
};

struct Frame {
  Image image;  // H x W x 3
  CameraIntrinsics intrinsics;
  CameraPose pose;
  double timestamp = 0.0;
  std::optional<Image> depth_target;   // H x W x 1
  std::optional<Image> normal_target;  // H x W x 3
  std::optional<Image> mask;           // H x W x 1, nonzero = valid
};

/// H x W x 6 image of (direction, moment) per pixel.
using PluckerImage = Image;

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

/// sigma = sqrt(-(l/2)^2 / (2 ln o_th)). Throws DomainError for l <= 0 or o_th outside (0, 1).
double temporal_sigma(double lifespan, double o_th = kOpacityThreshold);

double opacity_at(const Gaussian4D& g, double t, double o_th = kOpacityThreshold);
Vec3 position_at(const Gaussian4D& g, double t);
Quat axis_angle_to_quat(const Vec3& axis_angle);
Quat orientation_at(const Gaussian4D& g, double t);

SurfelSnapshot snapshot_at(const Gaussian4D& g, double t, double o_th = kOpacityThreshold);
std::vector<SurfelSnapshot> evaluate_at_time(const GaussianScene& scene, double t,
                                             double o_th = kOpacityThreshold);

/// World ray through the center of pixel (px, py).
Ray pixel_ray(const CameraIntrinsics& intr, const CameraPose& pose, int px, int py);

/// Continuous pixel coordinates of a world point, in the same units as pixel
/// indices (pixel (u, v) has its center at (u, v)). Empty when behind the camera.
std::optional<Vec2> project(const CameraIntrinsics& intr, const CameraPose& pose,
                            const Vec3& p_world);

PluckerImage plucker_rays(const CameraIntrinsics& intr, const CameraPose& pose);

}  // namespace gs4d
