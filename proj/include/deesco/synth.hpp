#pragma once

// Procedural gaze dataset with exact ground truth. Each crop is an elliptical
// sclera on a skin background with an iris/pupil disc whose center offset is
// a linear function of the normalized gaze target; subjects differ in iris
// radius and tint, eyelid aperture, skin tone, and head placement (which also
// drives the 16x16 position mask). Per-sample substream seeds make
// regeneration byte-identical.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deesco/dataset.hpp"
#include "deesco/rng.hpp"

namespace deesco {

struct SynthParams {
  std::size_t n_subjects = 6;
  std::size_t samples_per_subject = 500;
  std::size_t crop_h = 32, crop_w = 32;  // per eye
  TargetKind target = TargetKind::Gaze3d;
  GazeRanges ranges;
  std::array<double, 2> screen_half_extent_mm{160.0, 100.0};
  double noise_sigma = 0.02;
  double illumination_min = 0.85, illumination_max = 1.15;
  double iris_radius_min = 0.11, iris_radius_max = 0.15;  // of min(h,w)
};

namespace detail {

struct SubjectAppearance {
  double iris_frac;
  std::array<double, 3> iris_rgb;
  std::array<double, 3> skin_rgb;
  double sclera_level;
  double aperture;                 // eyelid opening factor
  std::array<double, 2> head;     // fractional head placement in [0,1]^2
  std::array<double, 2> eye_off_l, eye_off_r;  // small per-eye center offsets
};

inline SubjectAppearance subject_appearance(std::uint64_t seed,
                                            std::uint32_t sid) {
  Rng rng = substream(seed, "subject", sid);
  SubjectAppearance a;
  a.iris_frac = 0.0;  // filled by caller from params
  const double base = rng.uniform(0.05, 0.30);
  a.iris_rgb = {base, base + rng.uniform(0.0, 0.15), base + rng.uniform(0.0, 0.2)};
  const double skin = rng.uniform(0.70, 0.85);
  a.skin_rgb = {skin, skin * rng.uniform(0.92, 1.0), skin * rng.uniform(0.85, 0.98)};
  a.sclera_level = rng.uniform(0.92, 0.98);
  a.aperture = rng.uniform(0.78, 1.0);
  a.head = {rng.uniform(0.30, 0.70), rng.uniform(0.30, 0.70)};
  a.eye_off_l = {rng.uniform(-0.008, 0.008), rng.uniform(-0.008, 0.008)};
  a.eye_off_r = {rng.uniform(-0.008, 0.008), rng.uniform(-0.008, 0.008)};
  return a;
}

/// Renders one eye crop (planar CHW). (eu, ev) is the normalized gaze in
/// [-1,1]^2; the iris center offset from the eye center is linear in it.
inline void render_eye(std::vector<float>& out, std::size_t h, std::size_t w,
                       const SubjectAppearance& a,
                       const std::array<double, 2>& eye_off, double iris_frac,
                       double eu, double ev, double gain, double noise_sigma,
                       Rng& noise_rng) {
  const double cx = (0.5 + eye_off[0] + (a.head[0] - 0.5) * 0.03) *
                    static_cast<double>(w - 1);
  const double cy = (0.5 + eye_off[1] + (a.head[1] - 0.5) * 0.03) *
                    static_cast<double>(h - 1);
  const double ea = 0.42 * static_cast<double>(w);
  const double eb = 0.30 * static_cast<double>(h) * a.aperture;
  const double r = iris_frac * static_cast<double>(std::min(h, w));
  if (r >= eb)
    throw ConfigError("synth: iris radius " + std::to_string(r) +
                      "px does not fit the eye opening (" + std::to_string(eb) +
                      "px): degenerate appearance parameters");
  // Keep the disc fully inside the opening so the offset stays linear.
  const double kx = 0.80 * (ea - r);
  const double ky = 0.80 * (eb - r);
  const double icx = cx + eu * kx;
  const double icy = cy + ev * ky;
  const double rp = 0.45 * r;  // pupil

  out.assign(3 * h * w, 0.0f);
  const double edge = std::min(ea, eb);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dex = (static_cast<double>(x) - cx) / ea;
      const double dey = (static_cast<double>(y) - cy) / eb;
      const double de = std::sqrt(dex * dex + dey * dey);
      const double alpha_e = std::clamp((1.0 - de) * edge + 0.5, 0.0, 1.0);
      const double di = std::hypot(static_cast<double>(x) - icx,
                                   static_cast<double>(y) - icy);
      const double alpha_i = std::clamp(r - di + 0.5, 0.0, 1.0) * alpha_e;
      const double alpha_p = std::clamp(rp - di + 0.5, 0.0, 1.0) * alpha_e;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = a.skin_rgb[c];
        v = v * (1.0 - alpha_e) + a.sclera_level * alpha_e;
        v = v * (1.0 - alpha_i) + a.iris_rgb[c] * alpha_i;
        v = v * (1.0 - alpha_p) + 0.05 * alpha_p;
        v *= gain;
        if (noise_sigma > 0.0) v += noise_sigma * noise_rng.normal();
        out[(c * h + y) * w + x] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

}  // namespace detail

/// Renders one sample deterministically from (seed, subject, sample index).
inline GazeSample synth_sample(std::uint64_t seed, const SynthParams& p,
                               std::uint32_t sid, std::size_t global_index) {
  detail::SubjectAppearance a = detail::subject_appearance(seed, sid);
  Rng srng = substream(seed, "sample", global_index);
  const double iris_frac =
      p.iris_radius_min +
      (p.iris_radius_max - p.iris_radius_min) *
          substream(seed, "iris", sid).uniform();

  GazeSample s;
  s.crop_h = p.crop_h;
  s.crop_w = p.crop_w;
  s.kind = p.target;
  s.subject = sid;
  double eu, ev;
  if (p.target == TargetKind::Gaze3d) {
    s.g0 = srng.uniform(-p.ranges.yaw_max, p.ranges.yaw_max);
    s.g1 = srng.uniform(-p.ranges.pitch_max, p.ranges.pitch_max);
    eu = s.g0 / p.ranges.yaw_max;
    ev = s.g1 / p.ranges.pitch_max;
  } else {
    s.g0 = srng.uniform(-1.0, 1.0);
    s.g1 = srng.uniform(-1.0, 1.0);
    s.sx_mm = p.screen_half_extent_mm[0];
    s.sy_mm = p.screen_half_extent_mm[1];
    eu = s.g0;
    ev = s.g1;
  }
  const double gain = srng.uniform(p.illumination_min, p.illumination_max);

  detail::render_eye(s.left, p.crop_h, p.crop_w, a, a.eye_off_l, iris_frac, eu,
                     ev, gain, p.noise_sigma, srng);
  detail::render_eye(s.right, p.crop_h, p.crop_w, a, a.eye_off_r, iris_frac,
                     eu, ev, gain, p.noise_sigma, srng);

  // Position mask: quantized per-sample head cell (subject placement plus a
  // small jitter, so the channel carries subject-placement signal).
  s.mask.assign(kMaskSize * kMaskSize, 0.0f);
  const double hx = std::clamp(a.head[0] + srng.uniform(-0.02, 0.02), 0.0, 0.999);
  const double hy = std::clamp(a.head[1] + srng.uniform(-0.02, 0.02), 0.0, 0.999);
  const std::size_t cell_x = static_cast<std::size_t>(hx * kMaskSize);
  const std::size_t cell_y = static_cast<std::size_t>(hy * kMaskSize);
  s.mask[cell_y * kMaskSize + cell_x] = 1.0f;
  return s;
}

/// Generates the full dataset on disk and returns its manifest.
inline DatasetManifest synth_generate(const std::filesystem::path& out_dir,
                                      std::uint64_t seed,
                                      const SynthParams& p) {
  if (p.n_subjects < 2)
    throw ConfigError(
        "synth_generate: need at least 2 subjects (leave-one-subject-out "
        "requires a held-out subject)");
  if (p.samples_per_subject < 1)
    throw ConfigError("synth_generate: samples_per_subject must be >= 1");
  if (p.crop_h < 16 || p.crop_w < 16)
    throw ConfigError("synth_generate: crops must be at least 16x16");
  if (!(p.iris_radius_min > 0.0) || p.iris_radius_max < p.iris_radius_min)
    throw ConfigError("synth_generate: bad iris radius range");

  std::filesystem::create_directories(out_dir / "samples");

  DatasetManifest m;
  m.count = p.n_subjects * p.samples_per_subject;
  m.target_kind = p.target;
  m.crop_h = p.crop_h;
  m.crop_w = p.crop_w;
  m.ranges = p.ranges;
  m.screen_half_extent_mm = p.target == TargetKind::Gaze2d
                                ? p.screen_half_extent_mm
                                : std::array<double, 2>{0.0, 0.0};
  m.seed = seed;
  m.generator = json{{"n_subjects", p.n_subjects},
                     {"samples_per_subject", p.samples_per_subject},
                     {"noise_sigma", p.noise_sigma},
                     {"illumination", {p.illumination_min, p.illumination_max}},
                     {"iris_radius", {p.iris_radius_min, p.iris_radius_max}}};

  std::size_t global = 0;
  for (std::uint32_t sid = 0; sid < p.n_subjects; ++sid) {
    m.subjects.push_back(sid);
    for (std::size_t k = 0; k < p.samples_per_subject; ++k, ++global) {
      GazeSample s = synth_sample(seed, p, sid, global);
      const std::string bytes = encode_sample(s);
      char name[32];
      std::snprintf(name, sizeof(name), "samples/s%06zu.dgz", global);
      const std::filesystem::path file = out_dir / name;
      std::ofstream os(file, std::ios::binary | std::ios::trunc);
      if (!os) throw DataError("synth_generate: cannot write " + file.string());
      os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!os) throw DataError("synth_generate: short write " + file.string());
      m.files.push_back({name, detail::checksum_hex(bytes), sid});
    }
  }

  std::ofstream os(out_dir / "manifest.json", std::ios::trunc);
  if (!os)
    throw DataError("synth_generate: cannot write manifest in " +
                    out_dir.string());
  os << manifest_to_json(m).dump(2) << "\n";
  return m;
}

}  // namespace deesco
