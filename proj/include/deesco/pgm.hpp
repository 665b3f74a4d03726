#pragma once

// Grayscale PGM (P5) export for heatmap dumps. Per-image min-max scaling to
// [0,255]; constant images map to mid-gray. Raw little-endian f64 dumps are
// available alongside since min-max scaling destroys cross-image
// comparability.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "deesco/errors.hpp"

namespace deesco {

inline void write_pgm(const std::filesystem::path& path,
                      std::span<const double> data, std::size_t h,
                      std::size_t w) {
  if (data.size() != h * w) throw UsageError("write_pgm: size mismatch");
  double lo = data[0], hi = data[0];
  for (double v : data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) +
                    "\n255\n";
  buf.reserve(buf.size() + data.size());
  for (double v : data) {
    const int g = span > 0.0
                      ? static_cast<int>(255.0 * (v - lo) / span + 0.5)
                      : 128;
    buf.push_back(static_cast<char>(std::clamp(g, 0, 255)));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_pgm: cannot open " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write_pgm: short write " + path.string());
}

inline void write_raw_f64(const std::filesystem::path& path,
                          std::span<const double> data) {
  std::string buf;
  buf.reserve(data.size() * 8);
  for (double d : data) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i)
      buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_raw_f64: cannot open " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write_raw_f64: short write " + path.string());
}

}  // namespace deesco
