#pragma once

// Per-patch opacity statistics, activation histograms, channel selection for
// pruning, and densification accounting.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gs4d/core_model.hpp"

namespace gs4d {

/// Opacities of the pixel-aligned Gaussians of a set of p x p patches, patch-major.
struct PatchOpacityGrid {
  int patch_size = 0;
  std::vector<double> values;  // n_patches * p^2

  int channels() const { return patch_size * patch_size; }
  std::size_t patch_count() const;
  std::span<const double> patch(std::size_t i) const;
};

struct ActivationHistogram {
  std::vector<std::uint64_t> counts;  // p^2 entries
  std::uint64_t total_patches = 0;
};

struct DensifyPlan {
  int spatial_factor = 1;   // R_s
  int temporal_factor = 1;  // R_t
  int kept_channels = 1;    // S
  int patch_size = 1;       // p
  /// Gaussians after densification relative to before: R_s^2 * R_t * S / p^2.
  double gaussian_ratio = 1.0;
  /// Space-time sampling gain: R_s^2 * R_t.
  int sampling_gain = 1;
  /// gaussian_ratio as an exact fraction.
  std::int64_t ratio_numerator = 1;
  std::int64_t ratio_denominator = 1;
};

struct PatchStats {
  double mean = 0.0;
  double stddev = 0.0;
};

PatchStats patch_stats(std::span<const double> patch);

/// m_k = o_k > mean + stddev.
std::vector<bool> activation_mask(std::span<const double> patch);

ActivationHistogram aggregate_histogram(std::span<const PatchOpacityGrid> grids);

/// The S channels with the largest counts, ties to the lower index, ascending.
std::vector<int> select_channels(const ActivationHistogram& h, int S);

/// Keeps the Gaussians at the selected intra-patch indices of a patch-major scene
/// (patch i owns Gaussians [i*p^2, (i+1)*p^2)).
GaussianScene apply_pruning(const GaussianScene& patch_major, int patch_size,
                            std::span<const int> channels);

DensifyPlan densify_plan(int spatial_factor, int temporal_factor, int kept_channels,
                         int patch_size);

struct PruningComparison {
  double histogram_kept_activation = 0.0;
  double random_kept_activation = 0.0;
  double uniform_kept_activation = 0.0;
};

/// Fraction of activated opacity mass (sum of o_k over masked entries) that
/// falls inside `channels`. Returns 1 when nothing is activated.
double kept_activation(std::span<const PatchOpacityGrid> grids, std::span<const int> channels);

/// S channels drawn uniformly without replacement, sorted ascending.
std::vector<int> random_channels(int patch_size, int S, std::uint64_t seed);
/// S evenly spaced channels floor(i * p^2 / S).
std::vector<int> uniform_channels(int patch_size, int S);

PruningComparison compare_pruning_strategies(std::span<const PatchOpacityGrid> grids, int S,
                                             std::uint64_t seed);

std::string channels_to_json(std::span<const int> channels);
std::vector<int> channels_from_json(const std::string& text);

}  // namespace gs4d
