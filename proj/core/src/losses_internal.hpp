#pragma once

#include "gs4d/losses_metrics.hpp"

namespace gs4d::detail {

/// SSIM of (a, b); when grad is non-null it receives d ssim / d a.
double ssim_with_gradient(const Image& a, const Image& b, const SsimParams& params, Image* grad);

}  // namespace gs4d::detail
