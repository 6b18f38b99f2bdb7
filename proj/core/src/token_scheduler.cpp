#include "gs4d/token_scheduler.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace gs4d {

namespace {

bool divides(std::int64_t d, std::int64_t n) { return d != 0 && n % d == 0; }

}  // namespace

std::vector<int> window_subsample(int window, int stride) {
  if (stride < 1 || window < stride) {
    throw DomainError("window_subsample: need window >= stride >= 1");
  }
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>((window + stride - 1) / stride));
  for (int i = 0; i < window; i += stride) idx.push_back(i);
  return idx;
}

std::int64_t patch_grid(const CameraIntrinsics& intr, int patch_size) {
  if (patch_size < 1) throw DomainError("patch_grid: patch size must be >= 1");
  intr.validate();
  if (intr.width % patch_size != 0 || intr.height % patch_size != 0) {
    const int pad_w = (patch_size - intr.width % patch_size) % patch_size;
    const int pad_h = (patch_size - intr.height % patch_size) % patch_size;
    throw DomainError("patch_grid: " + std::to_string(intr.width) + "x" +
                      std::to_string(intr.height) + " is not divisible by p=" +
                      std::to_string(patch_size) + "; pad width by " + std::to_string(pad_w) +
                      " and height by " + std::to_string(pad_h));
  }
  return static_cast<std::int64_t>(intr.width / patch_size) * (intr.height / patch_size);
}

TokenLayout build_layout(std::int64_t frames, std::int64_t chunks, int levels,
                         std::int64_t tokens_per_frame) {
  if (frames < 1 || chunks < 1 || levels < 1 || tokens_per_frame < 1) {
    throw DomainError("build_layout: all arguments must be positive");
  }
  if (levels > 30) throw DomainError("build_layout: too many levels");
  const std::int64_t top = std::int64_t{1} << (levels - 1);
  if (!divides(chunks, frames)) {
    throw DomainError("build_layout: M=" + std::to_string(chunks) + " does not divide N=" +
                      std::to_string(frames));
  }
  if (!divides(top, chunks)) {
    throw DomainError("build_layout: 2^(L-1)=" + std::to_string(top) + " does not divide M=" +
                      std::to_string(chunks));
  }
  if (!divides(top, tokens_per_frame)) {
    throw DomainError("build_layout: 2^(L-1)=" + std::to_string(top) +
                      " does not divide tokens_per_frame=" + std::to_string(tokens_per_frame));
  }
  TokenLayout layout;
  layout.frames = frames;
  layout.chunks = chunks;
  layout.levels = levels;
  layout.tokens_per_frame = tokens_per_frame;
  layout.total_tokens = frames * tokens_per_frame;
  for (int l = 0; l < levels; ++l) {
    const std::int64_t f = std::int64_t{1} << l;
    LevelLayout lv;
    lv.level = l;
    lv.chunk_count = chunks / f;
    lv.frames_per_chunk = (frames / chunks) * f;
    lv.tokens_per_frame = tokens_per_frame / f;
    lv.tokens_per_chunk = lv.frames_per_chunk * lv.tokens_per_frame;
    layout.per_level.push_back(lv);
  }
  return layout;
}

CostReport attention_cost(const TokenLayout& layout) {
  CostReport r;
  for (const LevelLayout& lv : layout.per_level) {
    const std::int64_t c = lv.chunk_count * lv.tokens_per_chunk * lv.tokens_per_chunk;
    r.per_level.push_back(c);
    r.total += c;
  }
  r.baseline = layout.total_tokens * layout.total_tokens;
  const std::int64_t g = std::gcd(r.total, r.baseline);
  r.ratio_numerator = g == 0 ? 0 : r.total / g;
  r.ratio_denominator = g == 0 ? 1 : r.baseline / g;
  r.ratio = r.baseline == 0 ? 0.0 : static_cast<double>(r.total) / static_cast<double>(r.baseline);
  return r;
}

std::pair<std::int64_t, std::int64_t> canonical_cost_ratio(std::int64_t chunks, int levels) {
  const std::int64_t num = (std::int64_t{1} << levels) - 1;
  const std::int64_t den = chunks * (std::int64_t{1} << (levels - 1));
  const std::int64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

std::vector<std::int64_t> level_token_indices(std::int64_t grid_rows, std::int64_t grid_cols,
                                              int level) {
  const std::int64_t row_step = std::int64_t{1} << ((level + 1) / 2);
  const std::int64_t col_step = std::int64_t{1} << (level / 2);
  if (grid_rows % row_step != 0 || grid_cols % col_step != 0) {
    throw DomainError("level_token_indices: grid not divisible at level " + std::to_string(level));
  }
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>((grid_rows / row_step) * (grid_cols / col_step)));
  for (std::int64_t r = 0; r < grid_rows; r += row_step) {
    for (std::int64_t c = 0; c < grid_cols; c += col_step) idx.push_back(r * grid_cols + c);
  }
  return idx;
}

PassthroughReport token_passthrough_check(const TokenLayout& layout, int token_dim,
                                          std::uint64_t seed) {
  if (token_dim < 1) throw DomainError("token_passthrough_check: token_dim must be >= 1");
  using Matrix = Eigen::MatrixXd;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto random_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(token_dim));
  const Matrix wq = random_matrix(token_dim, token_dim) * inv_sqrt_d;
  const Matrix wk = random_matrix(token_dim, token_dim) * inv_sqrt_d;
  const Matrix wv = random_matrix(token_dim, token_dim) * inv_sqrt_d;

  PassthroughReport rep;
  rep.shapes_preserved = true;
  for (const LevelLayout& lv : layout.per_level) {
    std::int64_t level_pairs = 0;
    const Eigen::Index rows = static_cast<Eigen::Index>(lv.tokens_per_chunk + 1);
    for (std::int64_t chunk = 0; chunk < lv.chunk_count; ++chunk) {
      // Row 0 is the classification token.
      const Matrix x = random_matrix(rows, token_dim);
      const Matrix q = x * wq;
      const Matrix k = x * wk;
      const Matrix v = x * wv;
      Matrix out(rows, token_dim);
      Eigen::VectorXd scores(rows);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < rows; ++j) {
          scores[j] = q.row(i).dot(k.row(j)) * inv_sqrt_d;
          ++rep.measured_pairs_with_cls;
          if (i > 0 && j > 0) ++level_pairs;
        }
        const double mx = scores.maxCoeff();
        const Eigen::VectorXd e = (scores.array() - mx).exp();
        out.row(i) = (e.transpose() * v) / e.sum();
      }
      rep.inputs.push_back({lv.level, x.rows(), x.cols()});
      rep.outputs.push_back({lv.level, out.rows(), out.cols()});
      if (out.rows() != x.rows() || out.cols() != x.cols() || !out.allFinite()) {
        rep.shapes_preserved = false;
      }
    }
    rep.measured_pairs_per_level.push_back(level_pairs);
    rep.measured_pairs_total += level_pairs;
  }
  return rep;
}

}  // namespace gs4d
