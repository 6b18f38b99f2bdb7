#include "gs4d/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <string>

#include "losses_internal.hpp"
#include "parallel.hpp"
#include "raster_internal.hpp"

namespace gs4d {

namespace {

constexpr double kProbabilityEps = 1e-6;
constexpr double kDepthEps = 1e-10;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

double clamp_probability(double p, const char* what, bool& warned) {
  if (p > kProbabilityEps && p < 1.0 - kProbabilityEps) return p;
  if (!warned) {
    std::clog << "gs4d: warning: " << what << " outside (1e-6, 1-1e-6) clamped before logit\n";
    warned = true;
  }
  return std::clamp(p, kProbabilityEps, 1.0 - kProbabilityEps);
}

Quat as_quat(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
Eigen::Vector4d as_vec(const Quat& q) { return {q.w, q.x, q.y, q.z}; }

// d/dq of sum(G .* R(q)) for the (unnormalized) rotation formula of Quat::to_rotation.
Eigen::Vector4d rotation_backward(const Quat& q, const Mat3& g) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Eigen::Vector4d out;
  out[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                  x * g(2, 1));
  out[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                  z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
  out[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                  w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
  out[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                  2.0 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return out;
}

// Backward of normalize(): gradient w.r.t. the unnormalized input.
Eigen::Vector4d normalize_backward(const Eigen::Vector4d& raw, const Eigen::Vector4d& g) {
  const double n = raw.norm();
  const Eigen::Vector4d unit = raw / n;
  return (g - unit * unit.dot(g)) / n;
}

// Backward of axis_angle_to_quat.
Vec3 axis_angle_backward(const Vec3& a, const Eigen::Vector4d& g) {
  const double theta = a.norm();
  double f = 0.0;  // sin(theta/2) / theta
  double h = 0.0;  // f'(theta) / theta
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    f = 0.5 - t2 / 48.0;
    h = -1.0 / 24.0 + t2 / 960.0;
  } else {
    const double s = std::sin(0.5 * theta), c = std::cos(0.5 * theta);
    f = s / theta;
    h = (0.5 * theta * c - s) / (theta * theta * theta);
  }
  const Vec3 gv(g[1], g[2], g[3]);
  return -0.5 * f * g[0] * a + f * gv + h * a * a.dot(gv);
}

// Gradient of one frame's loss w.r.t. a Gaussian's time-evaluated surfel.
struct SnapshotGrad {
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Zero();  // d loss / d rotation columns
  Vec2 scale = Vec2::Zero();
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
};

// Gradient w.r.t. decoded (constrained) Gaussian values; the raw chain rule is applied last.
struct ValueGrad {
  Vec3 position = Vec3::Zero();
  Vec2 scale = Vec2::Zero();
  Eigen::Vector4d orientation = Eigen::Vector4d::Zero();  // w.r.t. the unit quaternion
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
  double t_center = 0.0;
  double lifespan = 0.0;
  Vec3 velocity = Vec3::Zero();
  Vec3 ang_velocity = Vec3::Zero();

  ValueGrad& operator+=(const ValueGrad& o) {
    position += o.position;
    scale += o.scale;
    orientation += o.orientation;
    opacity += o.opacity;
    color += o.color;
    t_center += o.t_center;
    lifespan += o.lifespan;
    velocity += o.velocity;
    ang_velocity += o.ang_velocity;
    return *this;
  }
};

struct Contribution {
  std::uint32_t idx;
  SurfelHit hit;
  double alpha;
  double transmittance;
};

struct FrameResult {
  double mse = 0.0;
  double ssim_term = 0.0;
  double depth = 0.0;
  double normal = 0.0;
  std::vector<ValueGrad> grad;
};

struct Normalizers {
  double frames = 0.0;
  double depth_frames = 0.0;
  double normal_frames = 0.0;
};

void composite_backward(const detail::ViewPlan& plan, const Ray& ray,
                        const std::vector<std::uint32_t>& candidates, const RenderConfig& cfg,
                        const Vec3& g_color, double g_depth, const Vec3& g_normal,
                        std::vector<Contribution>& records, std::vector<SnapshotGrad>& sg) {
  records.clear();
  Vec3 acc_color = Vec3::Zero();
  double acc_depth = 0.0;
  Vec3 acc_normal = Vec3::Zero();
  const double t_final = detail::composite_ray(
      plan.surfels, candidates, ray, cfg,
      [&](std::uint32_t idx, const SurfelHit& hit, double alpha, double transmittance) {
        const detail::PreparedSurfel& ps = plan.surfels[idx];
        const double w = alpha * transmittance;
        acc_color += w * ps.snap.color;
        acc_depth += w * hit.depth;
        acc_normal += w * detail::facing_normal(ps.snap.normal, ray.direction);
        records.push_back({idx, hit, alpha, transmittance});
      });
  if (records.empty()) return;

  const double coverage = 1.0 - t_final;
  const Vec3 big_c = g_color;
  const double big_d = g_depth / (coverage + kDepthEps);
  const double g_coverage = -g_depth * acc_depth / ((coverage + kDepthEps) * (coverage + kDepthEps));
  Vec3 big_n = Vec3::Zero();
  const double nn = acc_normal.norm();
  if (nn > 0.0) {
    const Vec3 unit = acc_normal / nn;
    big_n = (g_normal - unit * unit.dot(g_normal)) / nn;
  }
  const double g_t_final = g_color.dot(cfg.background) - g_coverage;

  double behind = 0.0;  // sum over later contributions of w_j * (G . f_j)
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    const detail::PreparedSurfel& ps = plan.surfels[it->idx];
    const Vec3 n_face = detail::facing_normal(ps.snap.normal, ray.direction);
    const double sign = n_face.dot(ps.snap.normal) < 0.0 ? -1.0 : 1.0;
    const double w = it->alpha * it->transmittance;
    const double g_dot_f = big_c.dot(ps.snap.color) + big_d * it->hit.depth + big_n.dot(n_face);
    const double g_alpha =
        it->transmittance * g_dot_f - (behind + g_t_final * t_final) / (1.0 - it->alpha);
    behind += w * g_dot_f;

    SnapshotGrad& out = sg[it->idx];
    out.color += w * big_c;
    out.rotation.col(2) += sign * w * big_n;
    const double g_lambda = big_d * w;

    const double u = it->hit.u, v = it->hit.v;
    const double kernel = std::exp(-0.5 * (u * u + v * v));
    double g_u = 0.0, g_v = 0.0;
    if (ps.snap.opacity * kernel < cfg.alpha_clamp) {
      out.opacity += g_alpha * kernel;
      g_u = -g_alpha * it->alpha * u;
      g_v = -g_alpha * it->alpha * v;
    }

    // Ray / surfel-plane intersection.
    const Vec3 r1 = ps.rot.col(0), r2 = ps.rot.col(1), n = ps.rot.col(2);
    const Vec2& s = ps.snap.scale;
    const double denom = ray.direction.dot(n);
    const Vec3 delta = ray.origin + it->hit.depth * ray.direction - ps.snap.position;
    const Vec3 g_delta = g_u * r1 / s.x() + g_v * r2 / s.y();
    const double g_lambda_total = g_lambda + g_delta.dot(ray.direction);
    out.position += g_lambda_total * n / denom - g_delta;
    out.rotation.col(2) += -g_lambda_total * delta / denom;
    out.rotation.col(0) += g_u * delta / s.x();
    out.rotation.col(1) += g_v * delta / s.y();
    out.scale.x() += -g_u * u / s.x();
    out.scale.y() += -g_v * v / s.y();
  }
}

// Chains a frame's snapshot gradients back to the Gaussian's constrained values.
ValueGrad snapshot_to_values(const Gaussian4D& g, double t, double o_th, const SnapshotGrad& sg) {
  ValueGrad vg;
  const double tau = t - g.t_center;

  vg.position = sg.position;
  vg.velocity = sg.position * tau;
  vg.t_center -= sg.position.dot(g.velocity);

  const double k = -8.0 * std::log(o_th);
  const double l2 = g.lifespan * g.lifespan;
  const double e = std::exp(-0.5 * k * tau * tau / l2);
  const double o_t = g.opacity * e;
  vg.opacity = sg.opacity * e;
  vg.t_center += sg.opacity * o_t * k * tau / l2;
  vg.lifespan = sg.opacity * o_t * k * tau * tau / (l2 * g.lifespan);

  vg.scale = sg.scale;
  vg.color = sg.color;

  const Quat q = g.orientation;
  const Vec3 a = g.ang_velocity * tau;
  const Quat p = axis_angle_to_quat(a);
  const Quat m = q * p;
  const Quat q_t = m.normalized();
  const Eigen::Vector4d g_qt = rotation_backward(q_t, sg.rotation);
  const Eigen::Vector4d g_m = normalize_backward(as_vec(m), g_qt);
  const Quat gm = as_quat(g_m);
  vg.orientation = as_vec(gm * p.conjugate());
  const Eigen::Vector4d g_p = as_vec(q.conjugate() * gm);
  const Vec3 g_a = axis_angle_backward(a, g_p);
  vg.ang_velocity = g_a * tau;
  vg.t_center -= g_a.dot(g.ang_velocity);
  return vg;
}

Normalizers count_frames(std::span<const Frame> frames) {
  Normalizers n;
  n.frames = static_cast<double>(frames.size());
  for (const Frame& f : frames) {
    if (f.depth_target) n.depth_frames += 1.0;
    if (f.normal_target) n.normal_frames += 1.0;
  }
  return n;
}

FrameResult evaluate_frame(const GaussianScene& scene, const Frame& frame,
                           const RenderConfig& rcfg, const LossWeights& w,
                           const Normalizers& norm, bool with_grad) {
  FrameResult fr;
  const auto& intr = frame.intrinsics;
  const detail::ViewPlan plan =
      detail::plan_view(scene, intr, frame.pose, frame.timestamp, rcfg, std::nullopt);
  const RenderOutput out = detail::render_with_plan(plan, intr, frame.pose, rcfg);

  fr.mse = image_mse(out.color, frame.image);
  Image ssim_grad;
  if (w.ssim > 0.0) {
    fr.ssim_term = 1.0 - detail::ssim_with_gradient(out.color, frame.image, {},
                                                    with_grad ? &ssim_grad : nullptr);
  }
  const bool use_depth = frame.depth_target && w.depth > 0.0;
  const bool use_normal = frame.normal_target && w.normal > 0.0;
  if (use_depth) fr.depth = image_mse(out.depth, *frame.depth_target);
  if (use_normal) fr.normal = image_mse(out.normal, *frame.normal_target);
  if (!with_grad) return fr;

  const double pixels = static_cast<double>(intr.width) * intr.height;
  const double color_scale = 2.0 / (norm.frames * pixels * 3.0);
  const double depth_scale = use_depth ? w.depth * 2.0 / (norm.depth_frames * pixels) : 0.0;
  const double normal_scale =
      use_normal ? w.normal * 2.0 / (norm.normal_frames * pixels * 3.0) : 0.0;
  const double ssim_scale = -w.ssim / norm.frames;

  std::vector<SnapshotGrad> sg(scene.size());
  std::vector<Contribution> records;
  for (int py = 0; py < intr.height; ++py) {
    for (int px = 0; px < intr.width; ++px) {
      Vec3 g_color;
      for (int c = 0; c < 3; ++c) {
        g_color[c] = color_scale * (out.color.at(px, py, c) - frame.image.at(px, py, c));
        if (w.ssim > 0.0) g_color[c] += ssim_scale * ssim_grad.at(px, py, c);
      }
      double g_depth = 0.0;
      if (use_depth) g_depth = depth_scale * (out.depth.at(px, py) - frame.depth_target->at(px, py));
      Vec3 g_normal = Vec3::Zero();
      if (use_normal) {
        for (int c = 0; c < 3; ++c) {
          g_normal[c] = normal_scale * (out.normal.at(px, py, c) - frame.normal_target->at(px, py, c));
        }
      }
      composite_backward(plan, pixel_ray(intr, frame.pose, px, py), plan.tile_for(px, py), rcfg,
                         g_color, g_depth, g_normal, records, sg);
    }
  }
  fr.grad.resize(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    fr.grad[i] = snapshot_to_values(scene.get(i), frame.timestamp, rcfg.o_th, sg[i]);
  }
  return fr;
}

double l1_subgradient(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

LossAndGrad evaluate(const ParamVector& pv, std::span<const Frame> frames, const FitConfig& cfg,
                     int step, bool with_grad) {
  if (frames.empty()) throw DomainError("loss_and_grad: at least one frame is required");
  const GaussianScene scene = decode_params(pv);
  const LossWeights w = warmup(step, cfg.weights);
  const Normalizers norm = count_frames(frames);
  RenderConfig rcfg = cfg.render;
  rcfg.threads = 1;
  rcfg.validate();

  std::vector<FrameResult> per_frame(frames.size());
  detail::parallel_for(frames.size(), cfg.threads, [&](std::size_t f) {
    per_frame[f] = evaluate_frame(scene, frames[f], rcfg, w, norm, with_grad);
  });

  LossAndGrad res;
  LossBreakdown& b = res.breakdown;
  b.warmed = w;
  for (const FrameResult& fr : per_frame) {
    b.mse += fr.mse;
    b.ssim_term += fr.ssim_term;
    b.depth += fr.depth;
    b.normal += fr.normal;
  }
  b.mse /= norm.frames;
  b.ssim_term /= norm.frames;
  if (norm.depth_frames > 0) b.depth /= norm.depth_frames;
  if (norm.normal_frames > 0) b.normal /= norm.normal_frames;
  const RegularizerLosses reg = reg_losses(scene);
  b.velocity = reg.velocity;
  b.angular = reg.angular;
  b.lifespan = reg.lifespan;
  b.total = b.mse + w.ssim * b.ssim_term + w.velocity * b.velocity + w.angular * b.angular +
            w.lifespan * b.lifespan + w.depth * b.depth + w.normal * b.normal;
  res.loss = b.total;
  if (!with_grad) return res;

  const std::size_t n = scene.size();
  std::vector<ValueGrad> total(n);
  for (const FrameResult& fr : per_frame) {
    for (std::size_t i = 0; i < n; ++i) total[i] += fr.grad[i];
  }
  const double inv_n = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  res.gradient = ParamVector::zeros_like(pv);
  ParamVector& g = res.gradient;
  using G = ParamGroup;
  for (std::size_t i = 0; i < n; ++i) {
    ValueGrad& vg = total[i];
    for (int k = 0; k < 3; ++k) {
      vg.velocity[k] += w.velocity * inv_n * l1_subgradient(scene.velocity[i][k]);
      vg.ang_velocity[k] += w.angular * inv_n * l1_subgradient(scene.ang_velocity[i][k]);
    }
    const double l = scene.lifespan[i];
    vg.lifespan += -w.lifespan * inv_n / (l * l);

    for (int k = 0; k < 3; ++k) {
      g.at(G::kPosition, i, k) = vg.position[k];
      const double c = scene.color[i][k];
      g.at(G::kColorLogit, i, k) = vg.color[k] * c * (1.0 - c);
      g.at(G::kVelocity, i, k) = vg.velocity[k];
      g.at(G::kAngularVelocity, i, k) = vg.ang_velocity[k];
    }
    for (int k = 0; k < 2; ++k) g.at(G::kLogScale, i, k) = vg.scale[k] * scene.scale[i][k];
    const Eigen::Vector4d raw_q(pv.at(G::kOrientation, i, 0), pv.at(G::kOrientation, i, 1),
                                pv.at(G::kOrientation, i, 2), pv.at(G::kOrientation, i, 3));
    const Eigen::Vector4d g_q = normalize_backward(raw_q, vg.orientation);
    for (int k = 0; k < 4; ++k) g.at(G::kOrientation, i, k) = g_q[k];
    const double o = scene.opacity[i];
    g.at(G::kOpacityLogit, i, 0) = vg.opacity * o * (1.0 - o);
    g.at(G::kTimeCenter, i, 0) = vg.t_center;
    const double raw_l = pv.at(G::kLifespanRaw, i, 0);
    g.at(G::kLifespanRaw, i, 0) = softplus(raw_l) < kMinLifespan ? 0.0 : vg.lifespan * sigmoid(raw_l);
  }
  return res;
}

std::string nan_diagnostic(const ParamVector& pv, const ParamVector* grad, int iteration) {
  const auto first_bad = [](const ParamVector& v) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < v.values.size(); ++i) {
      if (!std::isfinite(v.values[i])) return i;
    }
    return std::nullopt;
  };
  std::string msg = "non-finite loss at iteration " + std::to_string(iteration);
  if (auto i = first_bad(pv)) {
    return msg + "; first non-finite parameter group: " + param_group_name(pv.group_of(*i)) +
           " (" + pv.describe(*i) + ")";
  }
  if (grad) {
    if (auto i = first_bad(*grad)) {
      return msg + "; first non-finite gradient group: " + param_group_name(grad->group_of(*i)) +
             " (" + grad->describe(*i) + ")";
    }
  }
  return msg;
}

}  // namespace

void FitConfig::validate() const {
  if (iterations < 0) throw DomainError("fit: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw DomainError("fit: learning_rate must be positive");
  if (!(lr_final_fraction > 0.0) || lr_final_fraction > 1.0) {
    throw DomainError("fit: lr_final_fraction must lie in (0, 1]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw DomainError("fit: invalid Adam hyperparameters");
  }
  weights.validate();
  render.validate();
}

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kPosition: return "position";
    case ParamGroup::kLogScale: return "scale";
    case ParamGroup::kOrientation: return "orientation";
    case ParamGroup::kOpacityLogit: return "opacity";
    case ParamGroup::kColorLogit: return "color";
    case ParamGroup::kTimeCenter: return "t_center";
    case ParamGroup::kLifespanRaw: return "lifespan";
    case ParamGroup::kVelocity: return "velocity";
    case ParamGroup::kAngularVelocity: return "ang_velocity";
  }
  return "unknown";
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  ParamVector z;
  z.count = other.count;
  z.time_base = other.time_base;
  z.values.assign(other.values.size(), 0.0);
  return z;
}

std::size_t ParamVector::offset(ParamGroup g) const {
  std::size_t width = 0;
  for (int k = 0; k < static_cast<int>(g); ++k) width += static_cast<std::size_t>(kParamGroupWidth[k]);
  return width * count;
}

std::span<double> ParamVector::group(ParamGroup g) {
  return std::span<double>(values).subspan(offset(g), count * kParamGroupWidth[static_cast<int>(g)]);
}

std::span<const double> ParamVector::group(ParamGroup g) const {
  return std::span<const double>(values).subspan(offset(g),
                                                  count * kParamGroupWidth[static_cast<int>(g)]);
}

ParamGroup ParamVector::group_of(std::size_t flat) const {
  for (int k = kParamGroupCount - 1; k >= 0; --k) {
    if (flat >= offset(static_cast<ParamGroup>(k))) return static_cast<ParamGroup>(k);
  }
  return ParamGroup::kPosition;
}

std::string ParamVector::describe(std::size_t flat) const {
  const ParamGroup g = group_of(flat);
  const std::size_t local = flat - offset(g);
  const auto width = static_cast<std::size_t>(kParamGroupWidth[static_cast<int>(g)]);
  return std::string(param_group_name(g)) + "[" + std::to_string(local / width) + "][" +
         std::to_string(local % width) + "]";
}

ParamVector encode_params(const GaussianScene& scene) {
  using G = ParamGroup;
  ParamVector pv;
  pv.count = scene.size();
  pv.time_base = scene.time_base;
  pv.values.assign(pv.count * kParamsPerGaussian, 0.0);
  bool warned_opacity = false, warned_color = false;
  for (std::size_t i = 0; i < pv.count; ++i) {
    for (int k = 0; k < 3; ++k) {
      pv.at(G::kPosition, i, k) = scene.position[i][k];
      pv.at(G::kColorLogit, i, k) = logit(clamp_probability(scene.color[i][k], "color", warned_color));
      pv.at(G::kVelocity, i, k) = scene.velocity[i][k];
      pv.at(G::kAngularVelocity, i, k) = scene.ang_velocity[i][k];
    }
    for (int k = 0; k < 2; ++k) pv.at(G::kLogScale, i, k) = std::log(scene.scale[i][k]);
    const Quat q = scene.orientation[i].normalized();
    pv.at(G::kOrientation, i, 0) = q.w;
    pv.at(G::kOrientation, i, 1) = q.x;
    pv.at(G::kOrientation, i, 2) = q.y;
    pv.at(G::kOrientation, i, 3) = q.z;
    pv.at(G::kOpacityLogit, i, 0) = logit(clamp_probability(scene.opacity[i], "opacity", warned_opacity));
    pv.at(G::kTimeCenter, i, 0) = scene.t_center[i];
    pv.at(G::kLifespanRaw, i, 0) = softplus_inverse(std::max(scene.lifespan[i], kMinLifespan));
  }
  return pv;
}

GaussianScene decode_params(const ParamVector& pv) {
  using G = ParamGroup;
  if (pv.values.size() != pv.count * kParamsPerGaussian) {
    throw DomainError("decode_params: value count does not match Gaussian count");
  }
  GaussianScene scene;
  scene.time_base = pv.time_base;
  scene.reserve(pv.count);
  for (std::size_t i = 0; i < pv.count; ++i) {
    Gaussian4D g;
    for (int k = 0; k < 3; ++k) {
      g.position[k] = pv.at(G::kPosition, i, k);
      g.color[k] = sigmoid(pv.at(G::kColorLogit, i, k));
      g.velocity[k] = pv.at(G::kVelocity, i, k);
      g.ang_velocity[k] = pv.at(G::kAngularVelocity, i, k);
    }
    for (int k = 0; k < 2; ++k) g.scale[k] = std::exp(pv.at(G::kLogScale, i, k));
    g.orientation = Quat{pv.at(G::kOrientation, i, 0), pv.at(G::kOrientation, i, 1),
                         pv.at(G::kOrientation, i, 2), pv.at(G::kOrientation, i, 3)}
                        .normalized();
    g.opacity = sigmoid(pv.at(G::kOpacityLogit, i, 0));
    g.t_center = pv.at(G::kTimeCenter, i, 0);
    g.lifespan = std::max(softplus(pv.at(G::kLifespanRaw, i, 0)), kMinLifespan);
    scene.push_back(g);
  }
  return scene;
}

LossAndGrad loss_and_grad(const ParamVector& pv, std::span<const Frame> frames,
                          const FitConfig& cfg, int step) {
  return evaluate(pv, frames, cfg, step, true);
}

double loss_only(const ParamVector& pv, std::span<const Frame> frames, const FitConfig& cfg,
                 int step) {
  return evaluate(pv, frames, cfg, step, false).loss;
}

std::vector<double> finite_diff_grad(const std::function<double(const ParamVector&)>& objective,
                                     const ParamVector& pv, std::span<const std::size_t> indices,
                                     double relative_step) {
  std::vector<double> out;
  out.reserve(indices.size());
  ParamVector probe = pv;
  for (const std::size_t i : indices) {
    if (i >= pv.values.size()) throw DomainError("finite_diff_grad: index out of range");
    const double x = pv.values[i];
    const double h = relative_step * std::max(1.0, std::abs(x));
    probe.values[i] = x + h;
    const double f_plus = objective(probe);
    probe.values[i] = x - h;
    const double f_minus = objective(probe);
    probe.values[i] = x;
    out.push_back((f_plus - f_minus) / (2.0 * h));
  }
  return out;
}

std::vector<double> finite_diff_grad(const ParamVector& pv, std::span<const Frame> frames,
                                     const FitConfig& cfg, int step,
                                     std::span<const std::size_t> indices) {
  return finite_diff_grad([&](const ParamVector& p) { return loss_only(p, frames, cfg, step); },
                          pv, indices);
}

std::uint64_t discontinuity_signature(const ParamVector& pv, std::span<const Frame> frames,
                                      const FitConfig& cfg) {
  constexpr std::uint64_t kPrime = 1099511628211ull;
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&](std::uint64_t v) {
    h ^= v;
    h *= kPrime;
  };
  const GaussianScene scene = decode_params(pv);
  RenderConfig rcfg = cfg.render;
  rcfg.threads = 1;
  for (const Frame& frame : frames) {
    const detail::ViewPlan plan =
        detail::plan_view(scene, frame.intrinsics, frame.pose, frame.timestamp, rcfg, std::nullopt);
    for (int py = 0; py < frame.intrinsics.height; ++py) {
      for (int px = 0; px < frame.intrinsics.width; ++px) {
        const Ray ray = pixel_ray(frame.intrinsics, frame.pose, px, py);
        detail::composite_ray(plan.surfels, plan.tile_for(px, py), ray, rcfg,
                              [&](std::uint32_t idx, const SurfelHit& hit, double, double) {
                                const auto& ps = plan.surfels[idx];
                                const double kernel = std::exp(-0.5 * (hit.u * hit.u + hit.v * hit.v));
                                const bool clamped = ps.snap.opacity * kernel >= rcfg.alpha_clamp;
                                const bool flipped = ps.snap.normal.dot(ray.direction) > 0.0;
                                mix(idx);
                                mix((clamped ? 2u : 0u) | (flipped ? 1u : 0u));
                              });
        mix(0xffffffffull);
      }
    }
  }
  return h;
}

FitResult fit(const GaussianScene& initial, std::span<const Frame> frames, const FitConfig& cfg,
              const FitCallback& on_iteration) {
  cfg.validate();
  FitResult result;
  result.scene = initial;
  if (cfg.iterations == 0) return result;
  if (frames.empty()) throw DomainError("fit: at least one frame is required");

  ParamVector pv = encode_params(initial);
  ParamVector best = pv;
  std::vector<double> m(pv.values.size(), 0.0), v(pv.values.size(), 0.0);
  double best_loss = std::numeric_limits<double>::infinity();
  const auto record = [&](int it, double loss) {
    result.loss_trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = pv;
      result.best_iteration = it;
    }
    result.best_trace.push_back(best_loss);
    if (on_iteration) on_iteration(it, loss);
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    for (const double x : pv.values) {
      if (!std::isfinite(x)) throw FitError(nan_diagnostic(pv, nullptr, it));
    }
    const LossAndGrad lg = loss_and_grad(pv, frames, cfg, it);
    bool finite = std::isfinite(lg.loss);
    for (const double g : lg.gradient.values) finite = finite && std::isfinite(g);
    if (!finite) throw FitError(nan_diagnostic(pv, &lg.gradient, it));
    record(it, lg.loss);

    const double progress = cfg.iterations > 1 ? static_cast<double>(it) / (cfg.iterations - 1) : 1.0;
    const double lr = cfg.learning_rate *
                      (cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction) * 0.5 *
                                                   (1.0 + std::cos(std::numbers::pi * progress)));
    const double bc1 = 1.0 - std::pow(cfg.beta1, it + 1);
    const double bc2 = 1.0 - std::pow(cfg.beta2, it + 1);
    for (std::size_t i = 0; i < pv.values.size(); ++i) {
      const double g = lg.gradient.values[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      pv.values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.epsilon);
    }
  }
  const double final_loss = loss_only(pv, frames, cfg, cfg.iterations);
  if (!std::isfinite(final_loss)) throw FitError(nan_diagnostic(pv, nullptr, cfg.iterations));
  record(cfg.iterations, final_loss);

  result.scene = decode_params(best);
  result.best_loss = best_loss;
  return result;
}

}  // namespace gs4d
