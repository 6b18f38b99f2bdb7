#include "gs4d/density_control.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <json.hpp>

namespace gs4d {

std::size_t PatchOpacityGrid::patch_count() const {
  const int c = channels();
  return c == 0 ? 0 : values.size() / static_cast<std::size_t>(c);
}

std::span<const double> PatchOpacityGrid::patch(std::size_t i) const {
  const auto c = static_cast<std::size_t>(channels());
  return std::span<const double>(values).subspan(i * c, c);
}

PatchStats patch_stats(std::span<const double> patch) {
  if (patch.empty()) throw DomainError("patch_stats: empty patch");
  double sum = 0.0;
  for (const double o : patch) sum += o;
  const double n = static_cast<double>(patch.size());
  const double mean = sum / n;
  double var = 0.0;
  for (const double o : patch) var += (o - mean) * (o - mean);
  var /= n;
  return {mean, std::sqrt(var)};
}

std::vector<bool> activation_mask(std::span<const double> patch) {
  const PatchStats st = patch_stats(patch);
  const double threshold = st.mean + st.stddev;
  std::vector<bool> mask(patch.size());
  for (std::size_t k = 0; k < patch.size(); ++k) mask[k] = patch[k] > threshold;
  return mask;
}

ActivationHistogram aggregate_histogram(std::span<const PatchOpacityGrid> grids) {
  ActivationHistogram h;
  if (grids.empty()) return h;
  const int p = grids.front().patch_size;
  if (p < 1) throw DomainError("aggregate_histogram: patch size must be >= 1");
  h.counts.assign(static_cast<std::size_t>(p) * p, 0);
  for (const PatchOpacityGrid& g : grids) {
    if (g.patch_size != p) {
      throw DomainError("aggregate_histogram: mismatched patch size " +
                        std::to_string(g.patch_size) + " (expected " + std::to_string(p) + ")");
    }
    if (g.values.size() % static_cast<std::size_t>(g.channels()) != 0) {
      throw DomainError("aggregate_histogram: grid size is not a multiple of p^2");
    }
    for (std::size_t i = 0; i < g.patch_count(); ++i) {
      const std::vector<bool> mask = activation_mask(g.patch(i));
      for (std::size_t k = 0; k < mask.size(); ++k) h.counts[k] += mask[k] ? 1 : 0;
      ++h.total_patches;
    }
  }
  return h;
}

std::vector<int> select_channels(const ActivationHistogram& h, int S) {
  const int channels = static_cast<int>(h.counts.size());
  if (S < 1 || S > channels) {
    throw DomainError("select_channels: S=" + std::to_string(S) + " outside [1, " +
                      std::to_string(channels) + "]");
  }
  std::vector<int> idx(channels);
  std::iota(idx.begin(), idx.end(), 0);
  // Stable on ascending index, so equal counts (including zero) resolve to the lower index.
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return h.counts[a] > h.counts[b]; });
  idx.resize(S);
  std::sort(idx.begin(), idx.end());
  return idx;
}

GaussianScene apply_pruning(const GaussianScene& patch_major, int patch_size,
                            std::span<const int> channels) {
  if (patch_size < 1) throw DomainError("apply_pruning: patch size must be >= 1");
  const auto c = static_cast<std::size_t>(patch_size) * patch_size;
  if (patch_major.size() % c != 0) {
    throw DomainError("apply_pruning: scene size " + std::to_string(patch_major.size()) +
                      " is not a multiple of p^2=" + std::to_string(c));
  }
  for (const int k : channels) {
    if (k < 0 || static_cast<std::size_t>(k) >= c) {
      throw DomainError("apply_pruning: channel " + std::to_string(k) + " out of range");
    }
  }
  GaussianScene out;
  out.time_base = patch_major.time_base;
  const std::size_t patches = patch_major.size() / c;
  out.reserve(patches * channels.size());
  for (std::size_t i = 0; i < patches; ++i) {
    for (const int k : channels) {
      const std::size_t src = i * c + static_cast<std::size_t>(k);
      out.position.push_back(patch_major.position[src]);
      out.scale.push_back(patch_major.scale[src]);
      out.orientation.push_back(patch_major.orientation[src]);
      out.opacity.push_back(patch_major.opacity[src]);
      out.color.push_back(patch_major.color[src]);
      out.t_center.push_back(patch_major.t_center[src]);
      out.lifespan.push_back(patch_major.lifespan[src]);
      out.velocity.push_back(patch_major.velocity[src]);
      out.ang_velocity.push_back(patch_major.ang_velocity[src]);
    }
  }
  return out;
}

DensifyPlan densify_plan(int spatial_factor, int temporal_factor, int kept_channels,
                         int patch_size) {
  if (spatial_factor < 1 || temporal_factor < 1 || kept_channels < 1 || patch_size < 1) {
    throw DomainError("densify_plan: all factors must be positive");
  }
  DensifyPlan plan;
  plan.spatial_factor = spatial_factor;
  plan.temporal_factor = temporal_factor;
  plan.kept_channels = kept_channels;
  plan.patch_size = patch_size;
  plan.sampling_gain = spatial_factor * spatial_factor * temporal_factor;
  plan.ratio_numerator = static_cast<std::int64_t>(plan.sampling_gain) * kept_channels;
  plan.ratio_denominator = static_cast<std::int64_t>(patch_size) * patch_size;
  plan.gaussian_ratio =
      static_cast<double>(plan.ratio_numerator) / static_cast<double>(plan.ratio_denominator);
  return plan;
}

double kept_activation(std::span<const PatchOpacityGrid> grids, std::span<const int> channels) {
  double total = 0.0;
  double kept = 0.0;
  for (const PatchOpacityGrid& g : grids) {
    std::vector<bool> selected(static_cast<std::size_t>(g.channels()), false);
    for (const int k : channels) selected.at(static_cast<std::size_t>(k)) = true;
    for (std::size_t i = 0; i < g.patch_count(); ++i) {
      const auto patch = g.patch(i);
      const std::vector<bool> mask = activation_mask(patch);
      for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        total += patch[k];
        if (selected[k]) kept += patch[k];
      }
    }
  }
  return total > 0.0 ? kept / total : 1.0;
}

std::vector<int> random_channels(int patch_size, int S, std::uint64_t seed) {
  const int c = patch_size * patch_size;
  if (S < 1 || S > c) throw DomainError("random_channels: S out of range");
  std::vector<int> idx(c);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < S; ++i) {
    std::uniform_int_distribution<int> pick(i, c - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(S);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> uniform_channels(int patch_size, int S) {
  const int c = patch_size * patch_size;
  if (S < 1 || S > c) throw DomainError("uniform_channels: S out of range");
  std::vector<int> idx(S);
  for (int i = 0; i < S; ++i) {
    idx[i] = static_cast<int>(static_cast<std::int64_t>(i) * c / S);
  }
  return idx;
}

PruningComparison compare_pruning_strategies(std::span<const PatchOpacityGrid> grids, int S,
                                             std::uint64_t seed) {
  const ActivationHistogram h = aggregate_histogram(grids);
  if (h.counts.empty()) throw DomainError("compare_pruning_strategies: no grids");
  const int p = grids.front().patch_size;
  PruningComparison out;
  out.histogram_kept_activation = kept_activation(grids, select_channels(h, S));
  out.random_kept_activation = kept_activation(grids, random_channels(p, S, seed));
  out.uniform_kept_activation = kept_activation(grids, uniform_channels(p, S));
  return out;
}

std::string channels_to_json(std::span<const int> channels) {
  return nlohmann::json(std::vector<int>(channels.begin(), channels.end())).dump();
}

std::vector<int> channels_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_array()) throw DomainError("channel selection must be a JSON array of integers");
  return j.get<std::vector<int>>();
}

}  // namespace gs4d
