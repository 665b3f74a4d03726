#pragma once

// On-disk gaze dataset. One binary record per sample (magic "DGZS01",
// little-endian dims, f32 pixel data, f64 labels, u32 subject id) plus a JSON
// manifest carrying counts, ranges, per-file checksums, and the generator
// parameters. DEESCO_DATA_DIR may serve as the default dataset root.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "deesco/branches.hpp"
#include "deesco/errors.hpp"
#include "deesco/rng.hpp"
#include "deesco/tensor.hpp"

namespace deesco {

using nlohmann::json;

enum class TargetKind { Gaze3d, Gaze2d };

inline const char* to_string(TargetKind k) {
  return k == TargetKind::Gaze3d ? "gaze3d" : "gaze2d";
}

inline TargetKind target_kind_from_string(const std::string& s) {
  if (s == "gaze3d" || s == "3d") return TargetKind::Gaze3d;
  if (s == "gaze2d" || s == "2d") return TargetKind::Gaze2d;
  throw ConfigError("unknown target kind '" + s + "'");
}

struct GazeRanges {
  double yaw_max = 3.14159265358979323846 / 4.0;
  double pitch_max = 3.14159265358979323846 / 4.0;
};

/// One sample: paired eye crops (planar CHW f32 in [0,1]), the 16x16 binary
/// position mask, and exactly one ground-truth target per target kind.
struct GazeSample {
  std::vector<float> left, right;  // 3 * h * w each
  std::vector<float> mask;         // 16 * 16
  TargetKind kind = TargetKind::Gaze3d;
  double g0 = 0.0, g1 = 0.0;       // yaw/pitch radians, or screen u/v
  double sx_mm = 0.0, sy_mm = 0.0; // screen half extent (2D only)
  std::uint32_t subject = 0;
  std::size_t crop_h = 0, crop_w = 0;
};

struct DatasetManifest {
  int version = 1;
  std::string format = "DGZS01";
  std::size_t count = 0;
  std::vector<std::uint32_t> subjects;
  TargetKind target_kind = TargetKind::Gaze3d;
  std::size_t crop_h = 0, crop_w = 0, mask_size = kMaskSize;
  GazeRanges ranges;
  std::array<double, 2> screen_half_extent_mm{0.0, 0.0};
  std::uint64_t seed = 0;
  json generator;  // generation parameters, informational

  struct FileRef {
    std::string file;
    std::string checksum;  // fnv1a64 of the record bytes, hex
    std::uint32_t subject = 0;
  };
  std::vector<FileRef> files;
};

namespace detail {

constexpr char kRecordMagic[6] = {'D', 'G', 'Z', 'S', '0', '1'};

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& buf, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(buf, bits);
}

inline void put_f64le(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::string checksum_hex(const std::string& bytes) {
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(bytes.data(), bytes.size())));
  return std::string(out);
}

}  // namespace detail

inline std::string encode_sample(const GazeSample& s) {
  std::string buf;
  buf.append(detail::kRecordMagic, sizeof(detail::kRecordMagic));
  detail::put_u32(buf, static_cast<std::uint32_t>(s.crop_h));
  detail::put_u32(buf, static_cast<std::uint32_t>(s.crop_w));
  detail::put_u32(buf, 3);
  detail::put_u32(buf, kMaskSize);
  detail::put_u32(buf, s.kind == TargetKind::Gaze3d ? 0u : 1u);
  for (float v : s.left) detail::put_f32(buf, v);
  for (float v : s.right) detail::put_f32(buf, v);
  for (float v : s.mask) detail::put_f32(buf, v);
  detail::put_f64le(buf, s.g0);
  detail::put_f64le(buf, s.g1);
  detail::put_f64le(buf, s.sx_mm);
  detail::put_f64le(buf, s.sy_mm);
  detail::put_u32(buf, s.subject);
  return buf;
}

inline GazeSample decode_sample(const std::string& bytes,
                                const std::string& origin) {
  auto fail = [&](const std::string& why) -> GazeSample {
    throw DataError("sample " + origin + ": " + why);
  };
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw DataError("sample " + origin + ": truncated at offset " +
                      std::to_string(pos));
  };
  auto u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  };
  auto f32 = [&]() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  };
  auto f64 = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i]))
           << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, sizeof(d));
    return d;
  };

  need(sizeof(detail::kRecordMagic));
  if (std::memcmp(bytes.data(), detail::kRecordMagic,
                  sizeof(detail::kRecordMagic)) != 0)
    return fail("wrong magic (not a DGZS01 record)");
  pos += sizeof(detail::kRecordMagic);

  GazeSample s;
  s.crop_h = u32();
  s.crop_w = u32();
  const std::uint32_t channels = u32();
  const std::uint32_t mask_size = u32();
  const std::uint32_t kind = u32();
  if (channels != 3) return fail("expected 3 channels");
  if (mask_size != kMaskSize) return fail("expected 16x16 mask");
  if (kind > 1) return fail("bad target kind");
  s.kind = kind == 0 ? TargetKind::Gaze3d : TargetKind::Gaze2d;
  const std::size_t px = 3 * s.crop_h * s.crop_w;
  s.left.resize(px);
  for (auto& v : s.left) v = f32();
  s.right.resize(px);
  for (auto& v : s.right) v = f32();
  s.mask.resize(kMaskSize * kMaskSize);
  for (auto& v : s.mask) v = f32();
  s.g0 = f64();
  s.g1 = f64();
  s.sx_mm = f64();
  s.sy_mm = f64();
  s.subject = u32();
  if (pos != bytes.size()) return fail("trailing bytes");
  return s;
}

inline json manifest_to_json(const DatasetManifest& m) {
  json files = json::array();
  for (const auto& f : m.files)
    files.push_back({{"file", f.file},
                     {"checksum", f.checksum},
                     {"subject", f.subject}});
  return json{{"version", m.version},
              {"format", m.format},
              {"count", m.count},
              {"subjects", m.subjects},
              {"target_kind", to_string(m.target_kind)},
              {"crop_h", m.crop_h},
              {"crop_w", m.crop_w},
              {"mask_size", m.mask_size},
              {"gaze_range", {{"yaw_max", m.ranges.yaw_max},
                              {"pitch_max", m.ranges.pitch_max}}},
              {"screen_half_extent_mm", m.screen_half_extent_mm},
              {"seed", m.seed},
              {"generator", m.generator},
              {"files", files}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.format = j.at("format").get<std::string>();
    if (m.format != "DGZS01")
      throw DataError("manifest: unsupported format '" + m.format + "'");
    m.count = j.at("count").get<std::size_t>();
    m.subjects = j.at("subjects").get<std::vector<std::uint32_t>>();
    m.target_kind = target_kind_from_string(j.at("target_kind").get<std::string>());
    m.crop_h = j.at("crop_h").get<std::size_t>();
    m.crop_w = j.at("crop_w").get<std::size_t>();
    m.mask_size = j.at("mask_size").get<std::size_t>();
    m.ranges.yaw_max = j.at("gaze_range").at("yaw_max").get<double>();
    m.ranges.pitch_max = j.at("gaze_range").at("pitch_max").get<double>();
    m.screen_half_extent_mm =
        j.at("screen_half_extent_mm").get<std::array<double, 2>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.generator = j.value("generator", json::object());
    for (const auto& f : j.at("files")) {
      DatasetManifest::FileRef r;
      r.file = f.at("file").get<std::string>();
      r.checksum = f.at("checksum").get<std::string>();
      r.subject = f.at("subject").get<std::uint32_t>();
      m.files.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  if (m.files.size() != m.count)
    throw DataError("manifest: count " + std::to_string(m.count) +
                    " does not match " + std::to_string(m.files.size()) +
                    " listed files");
  return m;
}

/// Resolves a dataset path against DEESCO_DATA_DIR when relative.
inline std::filesystem::path resolve_dataset_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute() || std::filesystem::exists(p)) return p;
  if (const char* root = std::getenv("DEESCO_DATA_DIR")) {
    std::filesystem::path candidate = std::filesystem::path(root) / p;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return p;
}

/// Lazy, cached, checksum-validating reader over a generated dataset.
/// Concurrent read-only access is safe; the cache is mutex-guarded.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& dir) {
    Dataset d;
    d.dir_ = dir;
    std::ifstream is(dir / "manifest.json");
    if (!is)
      throw DataError("dataset: cannot open " + (dir / "manifest.json").string());
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw DataError("dataset manifest parse: " + std::string(e.what()));
    }
    d.manifest_ = manifest_from_json(j);
    d.cache_.resize(d.manifest_.count);
    return d;
  }

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.count; }
  const std::filesystem::path& dir() const { return dir_; }

  const GazeSample& sample(std::size_t i) const {
    if (i >= manifest_.count)
      throw UsageError("dataset: sample index " + std::to_string(i) +
                       " out of range (count " +
                       std::to_string(manifest_.count) + ")");
    std::lock_guard<std::mutex> lock(*mu_);
    if (!cache_[i]) cache_[i] = std::make_unique<GazeSample>(load(i));
    return *cache_[i];
  }

  std::uint32_t subject_of(std::size_t i) const {
    return manifest_.files.at(i).subject;
  }

 private:
  GazeSample load(std::size_t i) const {
    const auto& ref = manifest_.files[i];
    const std::filesystem::path p = dir_ / ref.file;
    std::ifstream is(p, std::ios::binary);
    if (!is) throw DataError("dataset: missing sample file " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    if (detail::checksum_hex(bytes) != ref.checksum)
      throw DataError("dataset: checksum mismatch for " + ref.file);
    GazeSample s = decode_sample(bytes, ref.file);
    if (s.crop_h != manifest_.crop_h || s.crop_w != manifest_.crop_w)
      throw DataError("dataset: " + ref.file + " crop " +
                      std::to_string(s.crop_h) + "x" + std::to_string(s.crop_w) +
                      " does not match manifest");
    if (s.kind != manifest_.target_kind)
      throw DataError("dataset: " + ref.file + " target kind mismatch");
    if (s.subject != ref.subject)
      throw DataError("dataset: " + ref.file + " subject mismatch");
    if (s.kind == TargetKind::Gaze3d) {
      if (std::abs(s.g0) > manifest_.ranges.yaw_max + 1e-9 ||
          std::abs(s.g1) > manifest_.ranges.pitch_max + 1e-9)
        throw DataError("dataset: " + ref.file + " gaze outside declared range");
    } else if (std::abs(s.g0) > 1.0 + 1e-9 || std::abs(s.g1) > 1.0 + 1e-9) {
      throw DataError("dataset: " + ref.file + " screen point outside [-1,1]");
    }
    return s;
  }

  std::filesystem::path dir_;
  DatasetManifest manifest_;
  mutable std::vector<std::unique_ptr<GazeSample>> cache_;
  mutable std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

/// Training-space targets in [-1,1]^2.
inline std::array<double, 2> normalize_targets(const GazeSample& s,
                                               const GazeRanges& r) {
  if (s.kind == TargetKind::Gaze2d) return {s.g0, s.g1};
  if (!(r.yaw_max > 0.0) || !(r.pitch_max > 0.0))
    throw ConfigError("normalize_targets: gaze ranges must be positive");
  const double u = s.g0 / r.yaw_max;
  const double v = s.g1 / r.pitch_max;
  if (std::abs(u) > 1.0 + 1e-9 || std::abs(v) > 1.0 + 1e-9)
    throw DataError("normalize_targets: target outside declared range");
  return {u, v};
}

/// Inverse of normalize_targets for metric computation.
inline std::array<double, 2> denormalize_targets(const std::array<double, 2>& t,
                                                 TargetKind kind,
                                                 const GazeRanges& r) {
  if (kind == TargetKind::Gaze2d) return t;
  return {t[0] * r.yaw_max, t[1] * r.pitch_max};
}

/// Stages a batch of samples as NCHW tensors with normalized targets.
inline BatchTensors make_batch(const Dataset& data,
                               std::span<const std::size_t> ids) {
  if (ids.empty()) throw UsageError("make_batch: empty id list");
  const auto& mf = data.manifest();
  const std::size_t b = ids.size();
  const std::size_t px = 3 * mf.crop_h * mf.crop_w;
  std::vector<double> left(b * px), right(b * px);
  std::vector<double> mask(b * kMaskSize * kMaskSize);
  std::vector<double> target(b * 2);
  BatchTensors batch;
  for (std::size_t i = 0; i < b; ++i) {
    const GazeSample& s = data.sample(ids[i]);
    for (std::size_t j = 0; j < px; ++j) {
      left[i * px + j] = s.left[j];
      right[i * px + j] = s.right[j];
    }
    for (std::size_t j = 0; j < kMaskSize * kMaskSize; ++j)
      mask[i * kMaskSize * kMaskSize + j] = s.mask[j];
    const auto t = normalize_targets(s, mf.ranges);
    target[i * 2] = t[0];
    target[i * 2 + 1] = t[1];
    batch.ids.push_back(ids[i]);
  }
  batch.left = Tensor::from_values({b, 3, mf.crop_h, mf.crop_w}, std::move(left));
  batch.right =
      Tensor::from_values({b, 3, mf.crop_h, mf.crop_w}, std::move(right));
  batch.mask =
      Tensor::from_values({b, 1, kMaskSize, kMaskSize}, std::move(mask));
  batch.target = Tensor::from_values({b, 2}, std::move(target));
  return batch;
}

}  // namespace deesco
