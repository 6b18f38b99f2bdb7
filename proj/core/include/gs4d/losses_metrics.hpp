#pragma once

// Training losses (photometric, structural, motion/lifespan regularizers,
// expert depth/normal guidance, warmup-weighted total) and evaluation metrics.

#include <functional>
#include <optional>
#include <span>

#include "gs4d/core_model.hpp"
#include "gs4d/image.hpp"
#include "gs4d/rasterizer.hpp"

namespace gs4d {

struct LossWeights {
  double lpips = 2.0;
  double ssim = 0.2;
  double velocity = 1.0;
  double angular = 1.0;
  double lifespan = 1.0;
  double depth = 0.1;
  double normal = 0.01;
  int warmup_steps = 2500;

  void validate() const;
};

/// Scales every weight by min(1, step / warmup_steps).
LossWeights warmup(int step, const LossWeights& weights);

struct LossBreakdown {
  double mse = 0.0;
  double lpips = 0.0;      // 0 when no perceptual plug-in is supplied
  double ssim_term = 0.0;  // mean over frames of 1 - SSIM
  double velocity = 0.0;
  double angular = 0.0;
  double lifespan = 0.0;
  double depth = 0.0;
  double normal = 0.0;
  LossWeights warmed;
  bool lpips_enabled = false;
  double total = 0.0;
};

/// Image-pair perceptual distance, e.g. an LPIPS network supplied by the caller.
using PerceptualLoss = std::function<double(const Image& rendered, const Image& target)>;

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

double image_mse(const Image& a, const Image& b);

/// Mean over frames of per-frame mean squared error.
double mse_loss(std::span<const Image> rendered, std::span<const Image> target);

/// Mean local SSIM over all full windows and channels.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

/// d ssim(a, b) / d a, same shape as a.
Image ssim_gradient(const Image& a, const Image& b, const SsimParams& params = {});

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE); `cap` when the images are identical.
double psnr(const Image& a, const Image& b, double peak = 1.0, double cap = kPsnrCap);

/// RMSE over pixels where the mask (if any) is nonzero and target > 0.
double depth_rmse(const Image& pred, const Image& target,
                  const std::optional<Image>& mask = std::nullopt);

/// Mean angle in degrees over pixels where the mask (if any) is nonzero and
/// both normals are nonzero.
double normal_angle_deg(const Image& pred, const Image& target,
                        const std::optional<Image>& mask = std::nullopt);

struct RegularizerLosses {
  double velocity = 0.0;  // mean L1 norm of velocities
  double angular = 0.0;   // mean L1 norm of angular velocities
  double lifespan = 0.0;  // mean of 1 / lifespan
};

RegularizerLosses reg_losses(const GaussianScene& scene);

struct ExpertLosses {
  double depth = 0.0;
  double normal = 0.0;
};

/// Mean over frames of the per-frame depth and normal MSE.
ExpertLosses expert_losses(std::span<const Image> rendered_depth,
                           std::span<const Image> target_depth,
                           std::span<const Image> rendered_normal,
                           std::span<const Image> target_normal);

/// Total training loss: MSE plus warmed-up weighted structural, perceptual,
/// regularizer and expert terms. Depth/normal terms use only frames carrying targets.
LossBreakdown total_loss(std::span<const RenderOutput> rendered, std::span<const Frame> targets,
                         const GaussianScene& scene, int step, const LossWeights& weights,
                         const PerceptualLoss& perceptual = {});

}  // namespace gs4d
