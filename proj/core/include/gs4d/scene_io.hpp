#pragma once

// Scene files, image files, dataset manifests and rolling-window assembly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gs4d/core_model.hpp"
#include "gs4d/image.hpp"

namespace gs4d {

/// Malformed or truncated file. offset() is the byte position of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline constexpr std::uint32_t kSceneFileVersion = 1;
inline constexpr std::size_t kSceneHeaderBytes = 24;
inline constexpr std::size_t kSceneFooterBytes = 8;
inline constexpr std::size_t kSceneFloatsPerGaussian = 21;

/// Exact byte size of a scene file holding n Gaussians.
constexpr std::size_t scene_file_size(std::size_t n) {
  return kSceneHeaderBytes + 4 * kSceneFloatsPerGaussian * n + kSceneFooterBytes;
}

std::vector<std::uint8_t> encode_scene(const GaussianScene& scene);
GaussianScene decode_scene(const std::vector<std::uint8_t>& bytes);

void write_scene(const GaussianScene& scene, const std::filesystem::path& path);
GaussianScene read_scene(const std::filesystem::path& path);

/// Writes via a temporary file in the same directory and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Portable any-map (P5/P6, 8 bit) and float-map (Pf/PF, little endian) images.
Image read_image(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);
void write_pgm(const Image& image, const std::filesystem::path& path);
/// 1 or 3 channel PFM; 2-channel images are padded with a zero third channel.
void write_pfm(const Image& image, const std::filesystem::path& path);

struct ManifestFrame {
  std::filesystem::path image_path;
  double timestamp = 0.0;
  CameraIntrinsics intrinsics;
  CameraPose pose;
  std::optional<std::filesystem::path> depth_path;
  std::optional<std::filesystem::path> normal_path;
  std::optional<std::filesystem::path> mask_path;
};

struct DatasetManifest {
  std::vector<ManifestFrame> frames;
};

/// Parses manifest JSON text; relative paths are resolved against base_dir.
DatasetManifest parse_manifest(const std::string& json_text,
                               const std::filesystem::path& base_dir);
std::string manifest_to_json(const DatasetManifest& manifest);

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Frame> frames;
};

/// Reads the manifest and decodes every referenced image. Timestamps must be
/// strictly increasing and every referenced file must exist.
LoadedDataset load_manifest(const std::filesystem::path& path);

struct WindowPlan {
  int window_size = 128;
  int input_stride = 2;
  int hop = 64;
};

struct FrameWindow {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  std::vector<int> input_indices;  // absolute frame indices
};

std::vector<FrameWindow> plan_windows(int frame_count, const WindowPlan& plan = {});

/// Concatenates window scenes onto the global clock: each t_center is shifted
/// by its scene's time_base. The result has time_base 0.
GaussianScene merge_windows(const std::vector<GaussianScene>& scenes);

}  // namespace gs4d
