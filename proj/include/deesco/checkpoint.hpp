#pragma once

// Versioned binary tensor container. Layout (all integers little-endian):
//   magic  "DEESCO01" (8 bytes)
//   u64    entry count
//   entry: u64 name length, UTF-8 name bytes,
//          u64 rank, u64 extents[rank], f64 values[product(extents)]
// Save -> load -> save must be byte-identical.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deesco/tensor.hpp"

namespace deesco {

constexpr char kCheckpointMagic[8] = {'D', 'E', 'E', 'S', 'C', 'O', '0', '1'};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(buf, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw DataError(origin_ + ": truncated (need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_) + ")");
  }
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

class CheckpointFile {
 public:
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  void add(std::string name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size())
      throw UsageError("checkpoint: entry '" + name + "' shape/value mismatch");
    entries.push_back({std::move(name), std::move(shape), std::move(values)});
  }

  void save(const std::filesystem::path& path) const {
    std::string buf;
    buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u64(buf, entries.size());
    for (const auto& e : entries) {
      detail::put_u64(buf, e.name.size());
      buf.append(e.name);
      detail::put_u64(buf, e.shape.size());
      for (auto d : e.shape) detail::put_u64(buf, d);
      for (double v : e.values) detail::put_f64(buf, v);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path.string());
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw DataError("checkpoint: short write to " + path.string());
  }

  static CheckpointFile load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    detail::ByteReader r(data, path.string());
    if (r.bytes(sizeof(kCheckpointMagic)) !=
        std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
      throw DataError("checkpoint: " + path.string() +
                      " has wrong magic (not a DEESCO01 file)");
    CheckpointFile out;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      CheckpointEntry e;
      const std::uint64_t name_len = r.u64();
      e.name = r.bytes(name_len);
      const std::uint64_t rank = r.u64();
      if (rank > 16)
        throw DataError("checkpoint: " + path.string() + " entry '" + e.name +
                        "' has implausible rank " + std::to_string(rank));
      std::size_t numel = 1;
      for (std::uint64_t d = 0; d < rank; ++d) {
        e.shape.push_back(r.u64());
        numel *= e.shape.back();
      }
      e.values.resize(numel);
      for (auto& v : e.values) v = r.f64();
      out.entries.push_back(std::move(e));
    }
    if (!r.exhausted())
      throw DataError("checkpoint: " + path.string() + " has trailing bytes");
    return out;
  }
};

}  // namespace deesco
