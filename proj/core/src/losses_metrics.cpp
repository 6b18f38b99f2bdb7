#include "gs4d/losses_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "losses_internal.hpp"

namespace gs4d {

void LossWeights::validate() const {
  if (lpips < 0 || ssim < 0 || velocity < 0 || angular < 0 || lifespan < 0 || depth < 0 ||
      normal < 0 || warmup_steps < 0) {
    throw DomainError("loss weights must be non-negative");
  }
}

LossWeights warmup(int step, const LossWeights& w) {
  if (step < 0) throw DomainError("warmup: step must be >= 0");
  const double f =
      w.warmup_steps == 0 ? 1.0 : std::min(1.0, static_cast<double>(step) / w.warmup_steps);
  LossWeights out = w;
  out.lpips *= f;
  out.ssim *= f;
  out.velocity *= f;
  out.angular *= f;
  out.lifespan *= f;
  out.depth *= f;
  out.normal *= f;
  return out;
}

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DomainError(std::string(what) + ": shape mismatch (" + std::to_string(a.width()) + "x" +
                      std::to_string(a.height()) + "x" + std::to_string(a.channels()) + " vs " +
                      std::to_string(b.width()) + "x" + std::to_string(b.height()) + "x" +
                      std::to_string(b.channels()) + ")");
  }
}

bool mask_ok(const std::optional<Image>& mask, int x, int y) {
  return !mask || mask->at(x, y) != 0.0;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable correlation of a single-channel w x h plane.
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: scatters a valid-size map back onto the w x h plane.
std::vector<double> filter_valid_adjoint(const std::vector<double>& in, int w, int h,
                                         const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double g = in[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * g;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double g = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(y) * w + x + i] += k[i] * g;
    }
  }
  return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
  std::vector<double> p(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) p[static_cast<std::size_t>(y) * img.width() + x] = img.at(x, y, c);
  }
  return p;
}

}  // namespace

double image_mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) throw DomainError("mse: empty image");
  double s = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  return s / static_cast<double>(av.size());
}

double mse_loss(std::span<const Image> rendered, std::span<const Image> target) {
  if (rendered.size() != target.size()) throw DomainError("mse_loss: frame count mismatch");
  if (rendered.empty()) throw DomainError("mse_loss: no frames");
  double s = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) s += image_mse(rendered[i], target[i]);
  return s / static_cast<double>(rendered.size());
}

namespace detail {

double ssim_with_gradient(const Image& a, const Image& b, const SsimParams& p, Image* grad) {
  require_same_shape(a, b, "ssim");
  const int w = a.width(), h = a.height();
  if (w < p.window || h < p.window) {
    throw DomainError("ssim: image " + std::to_string(w) + "x" + std::to_string(h) +
                      " is smaller than the " + std::to_string(p.window) + "px window");
  }
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const std::vector<double> k = gaussian_kernel(p.window, p.sigma);
  const std::size_t centers = static_cast<std::size_t>(w - p.window + 1) * (h - p.window + 1);
  const double scale = 1.0 / (static_cast<double>(centers) * a.channels());
  if (grad) *grad = Image(w, h, a.channels());

  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const std::vector<double> pa = channel_plane(a, c);
    const std::vector<double> pb = channel_plane(b, c);
    std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, w, h, k);
    const auto mu_b = filter_valid(pb, w, h, k);
    const auto e_aa = filter_valid(aa, w, h, k);
    const auto e_bb = filter_valid(bb, w, h, k);
    const auto e_ab = filter_valid(ab, w, h, k);
    std::vector<double> g_mu, g_aa, g_ab;
    if (grad) {
      g_mu.resize(centers);
      g_aa.resize(centers);
      g_ab.resize(centers);
    }
    for (std::size_t i = 0; i < centers; ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      const double a1 = 2.0 * ma * mb + c1, a2 = 2.0 * cov + c2;
      const double b1 = ma * ma + mb * mb + c1, b2 = va + vb + c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad) {
        const double ds_dmu = 2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1;
        const double ds_dcov = 2.0 * a1 / (b1 * b2);
        const double ds_dvar = -s / b2;
        g_mu[i] = scale * (ds_dmu - 2.0 * ma * ds_dvar - mb * ds_dcov);
        g_aa[i] = scale * ds_dvar;
        g_ab[i] = scale * ds_dcov;
      }
    }
    if (grad) {
      const auto d_mu = filter_valid_adjoint(g_mu, w, h, k);
      const auto d_aa = filter_valid_adjoint(g_aa, w, h, k);
      const auto d_ab = filter_valid_adjoint(g_ab, w, h, k);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          grad->at(x, y, c) = d_mu[i] + 2.0 * pa[i] * d_aa[i] + pb[i] * d_ab[i];
        }
      }
    }
  }
  return total * scale;
}

}  // namespace detail

double ssim(const Image& a, const Image& b, const SsimParams& params) {
  return detail::ssim_with_gradient(a, b, params, nullptr);
}

Image ssim_gradient(const Image& a, const Image& b, const SsimParams& params) {
  Image g;
  detail::ssim_with_gradient(a, b, params, &g);
  return g;
}

double psnr(const Image& a, const Image& b, double peak, double cap) {
  const double mse = image_mse(a, b);
  if (mse == 0.0) return cap;
  return 10.0 * std::log10(peak * peak / mse);
}

double depth_rmse(const Image& pred, const Image& target, const std::optional<Image>& mask) {
  require_same_shape(pred, target, "depth_rmse");
  double s = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      if (!mask_ok(mask, x, y) || !(target.at(x, y) > 0.0)) continue;
      const double d = pred.at(x, y) - target.at(x, y);
      s += d * d;
      ++n;
    }
  }
  if (n == 0) throw DomainError("depth_rmse: no valid pixels");
  return std::sqrt(s / static_cast<double>(n));
}

double normal_angle_deg(const Image& pred, const Image& target, const std::optional<Image>& mask) {
  require_same_shape(pred, target, "normal_angle_deg");
  if (pred.channels() != 3) throw DomainError("normal_angle_deg: normals need 3 channels");
  double s = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      if (!mask_ok(mask, x, y)) continue;
      const Vec3 a(pred.at(x, y, 0), pred.at(x, y, 1), pred.at(x, y, 2));
      const Vec3 b(target.at(x, y, 0), target.at(x, y, 1), target.at(x, y, 2));
      if (a.isZero(0.0) || b.isZero(0.0)) continue;
      s += std::atan2(a.cross(b).norm(), a.dot(b));
      ++n;
    }
  }
  if (n == 0) throw DomainError("normal_angle_deg: no valid pixels");
  return s / static_cast<double>(n) * 180.0 / std::numbers::pi;
}

RegularizerLosses reg_losses(const GaussianScene& scene) {
  RegularizerLosses r;
  if (scene.empty()) return r;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    r.velocity += scene.velocity[i].lpNorm<1>();
    r.angular += scene.ang_velocity[i].lpNorm<1>();
    r.lifespan += 1.0 / scene.lifespan[i];
  }
  const double n = static_cast<double>(scene.size());
  r.velocity /= n;
  r.angular /= n;
  r.lifespan /= n;
  return r;
}

ExpertLosses expert_losses(std::span<const Image> rendered_depth,
                           std::span<const Image> target_depth,
                           std::span<const Image> rendered_normal,
                           std::span<const Image> target_normal) {
  ExpertLosses e;
  if (!target_depth.empty()) e.depth = mse_loss(rendered_depth, target_depth);
  if (!target_normal.empty()) e.normal = mse_loss(rendered_normal, target_normal);
  return e;
}

LossBreakdown total_loss(std::span<const RenderOutput> rendered, std::span<const Frame> targets,
                         const GaussianScene& scene, int step, const LossWeights& weights,
                         const PerceptualLoss& perceptual) {
  weights.validate();
  if (rendered.size() != targets.size()) throw DomainError("total_loss: frame count mismatch");
  if (rendered.empty()) throw DomainError("total_loss: no frames");
  LossBreakdown out;
  out.warmed = warmup(step, weights);
  out.lpips_enabled = static_cast<bool>(perceptual);

  std::vector<Image> r_depth, t_depth, r_normal, t_normal;
  double mse = 0.0, structural = 0.0, lpips = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const Image& img = rendered[i].color;
    const Image& tgt = targets[i].image;
    mse += image_mse(img, tgt);
    structural += 1.0 - ssim(img, tgt);
    if (perceptual) lpips += perceptual(img, tgt);
    if (targets[i].depth_target) {
      r_depth.push_back(rendered[i].depth);
      t_depth.push_back(*targets[i].depth_target);
    }
    if (targets[i].normal_target) {
      r_normal.push_back(rendered[i].normal);
      t_normal.push_back(*targets[i].normal_target);
    }
  }
  const double frames = static_cast<double>(rendered.size());
  out.mse = mse / frames;
  out.ssim_term = structural / frames;
  out.lpips = lpips / frames;
  const RegularizerLosses reg = reg_losses(scene);
  out.velocity = reg.velocity;
  out.angular = reg.angular;
  out.lifespan = reg.lifespan;
  const ExpertLosses ex = expert_losses(r_depth, t_depth, r_normal, t_normal);
  out.depth = ex.depth;
  out.normal = ex.normal;

  const LossWeights& w = out.warmed;
  out.total = out.mse + w.lpips * out.lpips + w.ssim * out.ssim_term + w.velocity * out.velocity +
              w.angular * out.angular + w.lifespan * out.lifespan + w.depth * out.depth +
              w.normal * out.normal;
  return out;
}

}  // namespace gs4d
