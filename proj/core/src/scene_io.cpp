#include "gs4d/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gs4d/token_scheduler.hpp"

namespace gs4d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'4', 'D', 'G', 'T'};

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve) { bytes_.reserve(reserve); }

  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint64_t offset() const { return pos_; }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("scene file truncated", bytes_.size());
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_scene(const GaussianScene& scene) {
  if (!scene.consistent()) throw DomainError("encode_scene: inconsistent field arrays");
  const std::size_t n = scene.size();
  ByteWriter w(scene_file_size(n));
  w.raw(kMagic, 4);
  w.u32(kSceneFileVersion);
  w.u64(n);
  w.u64(0);  // reserved
  for (const Vec3& p : scene.position) for (int k = 0; k < 3; ++k) w.f32(p[k]);
  for (const Vec2& s : scene.scale) for (int k = 0; k < 2; ++k) w.f32(s[k]);
  for (const Quat& q : scene.orientation) {
    w.f32(q.w);
    w.f32(q.x);
    w.f32(q.y);
    w.f32(q.z);
  }
  for (const double o : scene.opacity) w.f32(o);
  for (const Vec3& c : scene.color) for (int k = 0; k < 3; ++k) w.f32(c[k]);
  for (const double t : scene.t_center) w.f32(t);
  for (const double l : scene.lifespan) w.f32(l);
  for (const Vec3& v : scene.velocity) for (int k = 0; k < 3; ++k) w.f32(v[k]);
  for (const Vec3& a : scene.ang_velocity) for (int k = 0; k < 3; ++k) w.f32(a[k]);
  w.f64(scene.time_base);
  return w.take();
}

GaussianScene decode_scene(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad scene file magic (expected \"4DGT\")", 0);
  }
  ByteReader r(bytes);
  r.u32();
  const std::uint32_t version = r.u32();
  if (version != kSceneFileVersion) {
    throw FormatError("unsupported scene file version " + std::to_string(version), 4);
  }
  const std::uint64_t n = r.u64();
  if (r.u64() != 0) throw FormatError("reserved header field is not zero", 16);
  const std::uint64_t max_n = (bytes.size() - std::min(bytes.size(), kSceneHeaderBytes)) / (4 * kSceneFloatsPerGaussian);
  if (n > max_n || bytes.size() != scene_file_size(static_cast<std::size_t>(n))) {
    throw FormatError("scene file size " + std::to_string(bytes.size()) + " does not match count " +
                          std::to_string(n),
                      std::min<std::uint64_t>(bytes.size(), n > max_n ? bytes.size() : scene_file_size(n)));
  }
  GaussianScene s;
  s.resize(static_cast<std::size_t>(n));
  for (auto& p : s.position) for (int k = 0; k < 3; ++k) p[k] = r.f32();
  for (auto& v : s.scale) for (int k = 0; k < 2; ++k) v[k] = r.f32();
  for (auto& q : s.orientation) {
    q.w = r.f32();
    q.x = r.f32();
    q.y = r.f32();
    q.z = r.f32();
  }
  for (auto& o : s.opacity) o = r.f32();
  for (auto& c : s.color) for (int k = 0; k < 3; ++k) c[k] = r.f32();
  for (auto& t : s.t_center) t = r.f32();
  for (auto& l : s.lifespan) l = r.f32();
  for (auto& v : s.velocity) for (int k = 0; k < 3; ++k) v[k] = r.f32();
  for (auto& a : s.ang_velocity) for (int k = 0; k < 3; ++k) a[k] = r.f32();
  s.time_base = r.f64();
  return s;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_scene(const GaussianScene& scene, const fs::path& path) {
  const auto bytes = encode_scene(scene);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

GaussianScene read_scene(const fs::path& path) {
  const std::string s = read_file(path);
  return decode_scene(std::vector<std::uint8_t>(s.begin(), s.end()));
}

// ---------------------------------------------------------------------------
// Images

namespace {

class HeaderTokens {
 public:
  explicit HeaderTokens(const std::string& data) : data_(data) {}

  std::string next() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError("unexpected end of image header", pos_);
    return data_.substr(start, pos_ - start);
  }
  int next_int() {
    const std::size_t at = pos_;
    const std::string tok = next();
    try {
      return std::stoi(tok);
    } catch (const std::exception&) {
      throw FormatError("expected integer in image header, got '" + tok + "'", at);
    }
  }
  double next_double() {
    const std::size_t at = pos_;
    const std::string tok = next();
    try {
      return std::stod(tok);
    } catch (const std::exception&) {
      throw FormatError("expected number in image header, got '" + tok + "'", at);
    }
  }
  /// Consumes the single whitespace byte that ends the header.
  std::size_t payload_start() { return pos_ + 1; }

 private:
  void skip_space_and_comments() {
    while (pos_ < data_.size()) {
      if (data_[pos_] == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(data_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

Image read_pnm(const std::string& data, int channels) {
  HeaderTokens h(data);
  h.next();
  const int w = h.next_int(), ht = h.next_int(), maxval = h.next_int();
  if (w <= 0 || ht <= 0 || maxval <= 0 || maxval > 65535) {
    throw FormatError("invalid PNM header values", 0);
  }
  const std::size_t start = h.payload_start();
  const int bps = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(w) * ht * channels * bps;
  if (data.size() < start + need) throw FormatError("PNM payload truncated", data.size());
  Image img(w, ht, channels);
  auto out = img.values();
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + start);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned v = bps == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    out[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

Image read_pfm(const std::string& data, int channels) {
  HeaderTokens h(data);
  h.next();
  const int w = h.next_int(), ht = h.next_int();
  const double scale = h.next_double();
  if (w <= 0 || ht <= 0 || scale == 0.0) throw FormatError("invalid PFM header values", 0);
  const bool little = scale < 0.0;
  const std::size_t start = h.payload_start();
  const std::size_t need = static_cast<std::size_t>(w) * ht * channels * 4;
  if (data.size() < start + need) throw FormatError("PFM payload truncated", data.size());
  Image img(w, ht, channels);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + start);
  std::size_t i = 0;
  for (int row = 0; row < ht; ++row) {
    const int y = ht - 1 - row;  // PFM rows run bottom to top
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c, ++i) {
        const unsigned char* b = p + 4 * i;
        const std::uint32_t bits =
            little ? (b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::uint32_t>(b[3]) << 24)
                   : (b[3] | b[2] << 8 | b[1] << 16 | static_cast<std::uint32_t>(b[0]) << 24);
        img.at(x, y, c) = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
  }
  return img;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_pnm(const Image& image, const fs::path& path, int channels, const char* magic) {
  if (image.channels() != channels) {
    throw DomainError(std::string("write_") + (channels == 3 ? "ppm" : "pgm") +
                      ": wrong channel count " + std::to_string(image.channels()));
  }
  std::string out = std::string(magic) + "\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  for (const double v : image.values()) out.push_back(static_cast<char>(quantize(v)));
  write_file_atomic(path, out);
}

}  // namespace

Image read_image(const fs::path& path) {
  const std::string data = read_file(path);
  if (data.size() < 2) throw FormatError("image file too short: " + path.string(), 0);
  const std::string magic = data.substr(0, 2);
  if (magic == "P6") return read_pnm(data, 3);
  if (magic == "P5") return read_pnm(data, 1);
  if (magic == "PF") return read_pfm(data, 3);
  if (magic == "Pf") return read_pfm(data, 1);
  throw FormatError("unsupported image format in " + path.string(), 0);
}

void write_ppm(const Image& image, const fs::path& path) { write_pnm(image, path, 3, "P6"); }
void write_pgm(const Image& image, const fs::path& path) { write_pnm(image, path, 1, "P5"); }

void write_pfm(const Image& image, const fs::path& path) {
  const int src_c = image.channels();
  if (src_c < 1 || src_c > 3) throw DomainError("write_pfm: 1 to 3 channels supported");
  const int c_out = src_c == 1 ? 1 : 3;
  std::string out = std::string(c_out == 1 ? "Pf" : "PF") + "\n" + std::to_string(image.width()) +
                    " " + std::to_string(image.height()) + "\n-1.0\n";
  out.reserve(out.size() + static_cast<std::size_t>(image.width()) * image.height() * c_out * 4);
  for (int row = 0; row < image.height(); ++row) {
    const int y = image.height() - 1 - row;
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < c_out; ++c) {
        const float v = c < src_c ? static_cast<float>(image.at(x, y, c)) : 0.0f;
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
      }
    }
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string relative_or_absolute(const fs::path& p) { return p.generic_string(); }

}  // namespace

DatasetManifest parse_manifest(const std::string& json_text, const fs::path& base_dir) {
  const json doc = json::parse(json_text);
  const json& list = doc.is_array() ? doc : doc.at("frames");
  DatasetManifest m;
  for (const json& jf : list) {
    ManifestFrame f;
    f.image_path = resolve(base_dir, jf.at("image_path").get<std::string>());
    f.timestamp = jf.at("timestamp_s").get<double>();
    const json& in = jf.at("intrinsics");
    f.intrinsics.fx = in.at("fx").get<double>();
    f.intrinsics.fy = in.at("fy").get<double>();
    f.intrinsics.cx = in.at("cx").get<double>();
    f.intrinsics.cy = in.at("cy").get<double>();
    f.intrinsics.width = in.at("width").get<int>();
    f.intrinsics.height = in.at("height").get<int>();
    const json& po = jf.at("pose");
    f.pose.rotation = Quat{po.at("qw").get<double>(), po.at("qx").get<double>(),
                           po.at("qy").get<double>(), po.at("qz").get<double>()}
                          .normalized();
    f.pose.translation =
        Vec3(po.at("tx").get<double>(), po.at("ty").get<double>(), po.at("tz").get<double>());
    if (jf.contains("depth_path")) f.depth_path = resolve(base_dir, jf["depth_path"].get<std::string>());
    if (jf.contains("normal_path")) f.normal_path = resolve(base_dir, jf["normal_path"].get<std::string>());
    if (jf.contains("mask_path")) f.mask_path = resolve(base_dir, jf["mask_path"].get<std::string>());
    f.intrinsics.validate();
    if (!std::isfinite(f.timestamp)) throw DomainError("manifest: non-finite timestamp");
    if (!m.frames.empty() && !(f.timestamp > m.frames.back().timestamp)) {
      throw DomainError("manifest: timestamps must be strictly increasing (frame " +
                        std::to_string(m.frames.size()) + ")");
    }
    m.frames.push_back(std::move(f));
  }
  return m;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json frames = json::array();
  for (const ManifestFrame& f : manifest.frames) {
    json jf;
    jf["image_path"] = relative_or_absolute(f.image_path);
    jf["timestamp_s"] = f.timestamp;
    jf["intrinsics"] = {{"fx", f.intrinsics.fx},       {"fy", f.intrinsics.fy},
                        {"cx", f.intrinsics.cx},       {"cy", f.intrinsics.cy},
                        {"width", f.intrinsics.width}, {"height", f.intrinsics.height}};
    jf["pose"] = {{"qw", f.pose.rotation.w},    {"qx", f.pose.rotation.x},
                  {"qy", f.pose.rotation.y},    {"qz", f.pose.rotation.z},
                  {"tx", f.pose.translation.x()}, {"ty", f.pose.translation.y()},
                  {"tz", f.pose.translation.z()}};
    if (f.depth_path) jf["depth_path"] = relative_or_absolute(*f.depth_path);
    if (f.normal_path) jf["normal_path"] = relative_or_absolute(*f.normal_path);
    if (f.mask_path) jf["mask_path"] = relative_or_absolute(*f.mask_path);
    frames.push_back(std::move(jf));
  }
  return json{{"frames", frames}}.dump(2);
}

LoadedDataset load_manifest(const fs::path& path) {
  LoadedDataset ds;
  ds.manifest = parse_manifest(read_file(path), path.parent_path());
  const auto load = [](const fs::path& p, int channels, const CameraIntrinsics& intr,
                       const char* what) {
    if (!fs::exists(p)) throw std::runtime_error(std::string("manifest: missing ") + what + " file " + p.string());
    Image img = read_image(p);
    if (img.width() != intr.width || img.height() != intr.height) {
      throw DomainError(std::string("manifest: ") + what + " " + p.string() +
                        " does not match the intrinsics size");
    }
    if (img.channels() != channels) {
      throw DomainError(std::string("manifest: ") + what + " " + p.string() + " must have " +
                        std::to_string(channels) + " channel(s)");
    }
    return img;
  };
  for (const ManifestFrame& mf : ds.manifest.frames) {
    Frame f;
    f.intrinsics = mf.intrinsics;
    f.pose = mf.pose;
    f.timestamp = mf.timestamp;
    f.image = load(mf.image_path, 3, mf.intrinsics, "image");
    if (mf.depth_path) f.depth_target = load(*mf.depth_path, 1, mf.intrinsics, "depth");
    if (mf.normal_path) f.normal_target = load(*mf.normal_path, 3, mf.intrinsics, "normal");
    if (mf.mask_path) f.mask = load(*mf.mask_path, 1, mf.intrinsics, "mask");
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Rolling windows

std::vector<FrameWindow> plan_windows(int frame_count, const WindowPlan& plan) {
  if (frame_count < 1) throw DomainError("plan_windows: frame_count must be >= 1");
  if (plan.window_size < 1 || plan.hop < 1 || plan.input_stride < 1) {
    throw DomainError("plan_windows: window, hop and stride must be >= 1");
  }
  std::vector<FrameWindow> out;
  const int w = std::min(plan.window_size, frame_count);
  int start = 0;
  while (true) {
    FrameWindow fw;
    fw.begin = start;
    fw.end = start + w;
    for (const int i : window_subsample(w, std::min(plan.input_stride, w))) {
      fw.input_indices.push_back(start + i);
    }
    out.push_back(std::move(fw));
    if (start + w >= frame_count) break;
    start = std::min(start + plan.hop, frame_count - w);
  }
  return out;
}

GaussianScene merge_windows(const std::vector<GaussianScene>& scenes) {
  GaussianScene out;
  std::size_t total = 0;
  for (const auto& s : scenes) total += s.size();
  out.reserve(total);
  for (const GaussianScene& s : scenes) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out.position.push_back(s.position[i]);
      out.scale.push_back(s.scale[i]);
      out.orientation.push_back(s.orientation[i]);
      out.opacity.push_back(s.opacity[i]);
      out.color.push_back(s.color[i]);
      out.t_center.push_back(s.t_center[i] + s.time_base);
      out.lifespan.push_back(s.lifespan[i]);
      out.velocity.push_back(s.velocity[i]);
      out.ang_velocity.push_back(s.ang_velocity[i]);
    }
  }
  return out;
}

}  // namespace gs4d
