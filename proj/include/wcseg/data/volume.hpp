#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "wcseg/error.hpp"

namespace wcseg {

/// Row-major 2-D array.
template <typename V>
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<V> values;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, V fill = V{}) : height(h), width(w), values(h * w, fill) {}
  Plane(std::size_t h, std::size_t w, std::vector<V> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w) throw ValidationError("plane: value count does not match extents");
  }

  std::size_t size() const { return values.size(); }
  V& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  const V& at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  bool operator==(const Plane&) const = default;
};

using Image2D = Plane<float>;
using Mask2D = Plane<std::uint8_t>;

/// Dense 3-D grid indexed (slice, row, column) with physical voxel size (dz, dy, dx) in mm.
template <typename V>
struct Grid3 {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> voxel_size_mm{1, 1, 1};
  std::vector<V> values;

  Grid3() = default;
  Grid3(std::array<std::size_t, 3> d, std::array<double, 3> vs, V fill = V{})
      : dims(d), voxel_size_mm(vs), values(d[0] * d[1] * d[2], fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t slice_size() const { return dims[1] * dims[2]; }
  V& at(std::size_t z, std::size_t y, std::size_t x) { return values[(z * dims[1] + y) * dims[2] + x]; }
  const V& at(std::size_t z, std::size_t y, std::size_t x) const {
    return values[(z * dims[1] + y) * dims[2] + x];
  }
  double voxel_volume_mm3() const { return voxel_size_mm[0] * voxel_size_mm[1] * voxel_size_mm[2]; }

  Plane<V> slice(std::size_t z) const {
    auto first = values.begin() + static_cast<std::ptrdiff_t>(z * slice_size());
    return Plane<V>(dims[1], dims[2], std::vector<V>(first, first + static_cast<std::ptrdiff_t>(slice_size())));
  }
  void set_slice(std::size_t z, const Plane<V>& p) {
    if (p.height != dims[1] || p.width != dims[2]) throw ValidationError("set_slice: extent mismatch");
    std::copy(p.values.begin(), p.values.end(), values.begin() + static_cast<std::ptrdiff_t>(z * slice_size()));
  }

  void validate() const {
    for (auto d : dims)
      if (d == 0) throw ValidationError("volume: dims must be positive");
    for (auto v : voxel_size_mm)
      if (!(v > 0)) throw ValidationError("volume: voxel sizes must be positive");
    if (values.size() != dims[0] * dims[1] * dims[2])
      throw ValidationError("volume: payload does not match dims");
  }

  bool operator==(const Grid3&) const = default;
};

using Volume = Grid3<float>;
using MaskVolume = Grid3<std::uint8_t>;

struct ScanMeta {
  std::string subject_id;
  std::string hand = "right";  // left | right
  std::string coil = "A";
  double field_T = 1.5;
  std::string session = "s1";

  // Identity used to pair predicted and reference scans.
  std::string scan_key() const {
    return subject_id + "|" + hand + "|" + coil + "|" + std::to_string(field_T) + "|" + session;
  }
  bool operator==(const ScanMeta&) const = default;
};

struct DatasetEntry {
  Volume image;
  MaskVolume mask;
  ScanMeta meta;
};

/// Immutable after construction; every mask matches its image dims.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<DatasetEntry> entries) : entries_(std::move(entries)) {
    for (const auto& e : entries_) {
      if (e.image.dims != e.mask.dims) throw ValidationError("dataset: mask dims differ from image dims");
      if (e.meta.subject_id.empty()) throw ValidationError("dataset: empty subject_id");
    }
  }
  const std::vector<DatasetEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const DatasetEntry& operator[](std::size_t i) const { return entries_[i]; }
  // Number of 2-D slice pairs.
  std::size_t slice_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.image.dims[0];
    return n;
  }

 private:
  std::vector<DatasetEntry> entries_;
};

inline void require_binary(const MaskVolume& m) {
  for (auto v : m.values)
    if (v > 1) throw FormatError("mask: non-binary value " + std::to_string(int(v)));
}

}  // namespace wcseg
