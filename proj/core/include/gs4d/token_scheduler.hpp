#pragma once

// Frame-window subsampling, patch tokenization, and the multi-level chunked
// spatio-temporal attention layout with its pair-count cost model.

#include <cstdint>
#include <vector>

#include "gs4d/core_model.hpp"

namespace gs4d {

struct LevelLayout {
  int level = 0;
  std::int64_t chunk_count = 0;
  std::int64_t frames_per_chunk = 0;
  std::int64_t tokens_per_frame = 0;
  /// Regular tokens per chunk; each chunk additionally carries one classification token.
  std::int64_t tokens_per_chunk = 0;
};

struct TokenLayout {
  std::int64_t frames = 0;            // N
  std::int64_t chunks = 0;            // M
  int levels = 0;                     // L
  std::int64_t tokens_per_frame = 0;  // at level 0
  std::int64_t total_tokens = 0;      // n = N * tokens_per_frame
  std::vector<LevelLayout> per_level;
};

struct CostReport {
  std::vector<std::int64_t> per_level;  // sum over chunks of tokens_per_chunk^2
  std::int64_t total = 0;
  std::int64_t baseline = 0;  // n^2
  /// total / baseline as an exact fraction (reduced) and as a double.
  std::int64_t ratio_numerator = 0;
  std::int64_t ratio_denominator = 1;
  double ratio = 0.0;
};

struct ChunkShape {
  int level = 0;
  std::int64_t rows = 0;  // tokens including the classification token
  std::int64_t dim = 0;
};

struct PassthroughReport {
  std::vector<ChunkShape> inputs;
  std::vector<ChunkShape> outputs;
  std::vector<std::int64_t> measured_pairs_per_level;  // regular-token pairs scored
  std::int64_t measured_pairs_total = 0;
  std::int64_t measured_pairs_with_cls = 0;  // including classification-token pairs
  bool shapes_preserved = false;
};

/// Frame indices {0, stride, 2*stride, ...} below window.
std::vector<int> window_subsample(int window, int stride);

/// (H / p) * (W / p); throws DomainError when either dimension is not a multiple of p.
std::int64_t patch_grid(const CameraIntrinsics& intr, int patch_size);

TokenLayout build_layout(std::int64_t frames, std::int64_t chunks, int levels,
                         std::int64_t tokens_per_frame);

CostReport attention_cost(const TokenLayout& layout);

/// (2^L - 1) / (M * 2^(L-1)) reduced, the closed-form cost ratio of the canonical layout.
std::pair<std::int64_t, std::int64_t> canonical_cost_ratio(std::int64_t chunks, int levels);

/// Flat indices (row-major over a rows x cols patch grid) kept at `level`:
/// odd levels drop alternate rows, even levels alternate columns, cumulatively.
std::vector<std::int64_t> level_token_indices(std::int64_t grid_rows, std::int64_t grid_cols,
                                              int level);

/// Runs single-head scaled-dot-product attention with random weights over
/// every chunk of the layout and reports shapes and the number of scored pairs.
PassthroughReport token_passthrough_check(const TokenLayout& layout, int token_dim,
                                          std::uint64_t seed = 0);

}  // namespace gs4d
