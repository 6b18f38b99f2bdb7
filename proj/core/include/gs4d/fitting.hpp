#pragma once

// Per-scene differentiable fitting: unconstrained reparameterization, analytic
// reverse-mode gradients through time evaluation, rasterization and losses,
// Adam, and a central finite-difference oracle.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gs4d/core_model.hpp"
#include "gs4d/losses_metrics.hpp"
#include "gs4d/rasterizer.hpp"

namespace gs4d {

struct FitConfig {
  int iterations = 2000;
  double learning_rate = 1e-2;
  /// Cosine decay from learning_rate to learning_rate * lr_final_fraction.
  double lr_final_fraction = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LossWeights weights;
  RenderConfig render;
  std::uint64_t seed = 0;
  /// Frame-level worker threads; 0 picks the hardware concurrency.
  int threads = 0;

  void validate() const;
};

/// Parameter groups of the unconstrained encoding, in storage order.
enum class ParamGroup : int {
  kPosition = 0,     // raw, 3
  kLogScale,         // log, 2
  kOrientation,      // raw quaternion (w,x,y,z), normalized on decode, 4
  kOpacityLogit,     // logit, 1
  kColorLogit,       // logit, 3
  kTimeCenter,       // raw, 1
  kLifespanRaw,      // inverse softplus, 1
  kVelocity,         // raw, 3
  kAngularVelocity,  // raw, 3
};

inline constexpr int kParamGroupCount = 9;
inline constexpr std::array<int, kParamGroupCount> kParamGroupWidth = {3, 2, 4, 1, 3, 1, 1, 3, 3};
inline constexpr int kParamsPerGaussian = 21;

const char* param_group_name(ParamGroup g);

/// Group-major flat vector: all positions, then all log-scales, and so on.
struct ParamVector {
  std::size_t count = 0;
  double time_base = 0.0;
  std::vector<double> values;

  static ParamVector zeros_like(const ParamVector& other);

  std::size_t offset(ParamGroup g) const;
  std::size_t index(ParamGroup g, std::size_t gaussian, int component) const {
    return offset(g) + gaussian * kParamGroupWidth[static_cast<int>(g)] + component;
  }
  double& at(ParamGroup g, std::size_t gaussian, int component) {
    return values[index(g, gaussian, component)];
  }
  double at(ParamGroup g, std::size_t gaussian, int component) const {
    return values[index(g, gaussian, component)];
  }
  std::span<double> group(ParamGroup g);
  std::span<const double> group(ParamGroup g) const;

  ParamGroup group_of(std::size_t flat) const;
  /// e.g. "velocity[3][1]".
  std::string describe(std::size_t flat) const;
};

ParamVector encode_params(const GaussianScene& scene);
GaussianScene decode_params(const ParamVector& pv);

struct LossAndGrad {
  double loss = 0.0;
  LossBreakdown breakdown;
  ParamVector gradient;
};

/// Loss of rendering decode(pv) at every frame's camera and timestamp, and its
/// exact gradient with respect to pv. The depth sort order is held fixed.
/// `step` drives the loss-weight warmup. Terms whose warmed weight is zero are
/// not evaluated and report 0 in the breakdown.
LossAndGrad loss_and_grad(const ParamVector& pv, std::span<const Frame> frames,
                          const FitConfig& cfg, int step);

/// Same objective as loss_and_grad without the gradient pass.
double loss_only(const ParamVector& pv, std::span<const Frame> frames, const FitConfig& cfg,
                 int step);

/// Central differences (f(x+h) - f(x-h)) / 2h with h = 1e-4 * max(1, |x|).
std::vector<double> finite_diff_grad(const std::function<double(const ParamVector&)>& objective,
                                     const ParamVector& pv, std::span<const std::size_t> indices,
                                     double relative_step = 1e-4);

std::vector<double> finite_diff_grad(const ParamVector& pv, std::span<const Frame> frames,
                                     const FitConfig& cfg, int step,
                                     std::span<const std::size_t> indices);

/// Hash of every pixel's ordered contributing set (index, alpha-clamp state,
/// facing flip) over all frames. Two parameter vectors with equal signatures lie
/// in the same smooth piece of the objective.
std::uint64_t discontinuity_signature(const ParamVector& pv, std::span<const Frame> frames,
                                      const FitConfig& cfg);

/// Thrown when the objective or its gradient becomes non-finite.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  GaussianScene scene;              // best iterate
  std::vector<double> loss_trace;   // loss of every evaluated iterate
  std::vector<double> best_trace;   // running minimum of loss_trace
  int best_iteration = -1;          // -1: the initialization was returned unchanged
  double best_loss = 0.0;
};

using FitCallback = std::function<void(int iteration, double loss)>;

FitResult fit(const GaussianScene& initial, std::span<const Frame> frames, const FitConfig& cfg,
              const FitCallback& on_iteration = {});

}  // namespace gs4d
