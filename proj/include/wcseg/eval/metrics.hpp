#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "wcseg/data/volume.hpp"

namespace wcseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  std::uint64_t predicted() const { return tp + fp; }
  std::uint64_t actual() const { return tp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Nonzero voxels count as foreground.
inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ValidationError("confusion: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

inline ConfusionCounts confusion(const Mask2D& pred, const Mask2D& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw ValidationError("dsc_2d: shape mismatch");
  return confusion(std::span(pred.values), std::span(gt.values));
}

inline ConfusionCounts confusion(const MaskVolume& pred, const MaskVolume& gt) {
  if (pred.dims != gt.dims) throw ValidationError("dsc_3d: dims mismatch");
  return confusion(std::span(pred.values), std::span(gt.values));
}

/// 2|P∩G| / (|P|+|G|); two empty masks score 1.
inline double dsc(const ConfusionCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline double dsc_2d(const Mask2D& pred, const Mask2D& gt) { return dsc(confusion(pred, gt)); }
inline double dsc_3d(const MaskVolume& pred, const MaskVolume& gt) { return dsc(confusion(pred, gt)); }

/// TP / (TP + FP) pooled over all pairs.
inline double precision_overall(std::span<const ConfusionCounts> per_item) {
  ConfusionCounts total;
  for (const auto& c : per_item) total += c;
  if (total.predicted() == 0) throw DegenerateDataError("precision: no predicted positives in the set");
  return static_cast<double>(total.tp) / static_cast<double>(total.predicted());
}

inline double precision_overall(const std::vector<std::pair<MaskVolume, MaskVolume>>& pred_gt) {
  std::vector<ConfusionCounts> c;
  for (const auto& [p, g] : pred_gt) c.push_back(confusion(p, g));
  return precision_overall(std::span<const ConfusionCounts>(c));
}

inline std::uint64_t count_foreground(const MaskVolume& m) {
  return static_cast<std::uint64_t>(m.values.size() -
                                    static_cast<std::size_t>(std::count(m.values.begin(), m.values.end(), 0)));
}

/// Foreground voxel count times the voxel volume, mm³.
inline double cartilage_volume(const MaskVolume& m) {
  for (double v : m.voxel_size_mm)
    if (!(v > 0)) throw ValidationError("cartilage_volume: voxel size missing or non-positive");
  return static_cast<double>(count_foreground(m)) * m.voxel_volume_mm3();
}

/// |V_gt - V_pred| / V_gt, percent.
inline double volume_error(double v_gt, double v_pred) {
  if (!(v_gt > 0)) throw DegenerateDataError("volume_error: reference volume must be positive");
  return std::abs(v_gt - v_pred) / v_gt * 100.0;
}

/// |v1 - v2| relative to the larger of the pair, percent.
inline double repeatability_pair(double v1, double v2) {
  const double hi = std::max(v1, v2);
  if (!(hi > 0)) throw DegenerateDataError("repeatability_pair: both volumes are zero");
  return std::abs(v1 - v2) / hi * 100.0;
}

// ---- zone analysis ----

inline constexpr std::size_t kZoneCount = 4;

/// Zone index 0..3 for a slice holding `count` reference pixels when the busiest slice of its volume
/// holds `max_count`: {0}, (0, 1/3], (1/3, 2/3], (2/3, 1]. Exact integer comparison.
inline std::size_t zone_of(std::uint64_t count, std::uint64_t max_count) {
  if (max_count == 0) throw DegenerateDataError("zone: volume has no reference cartilage");
  if (count > max_count) throw ValidationError("zone: slice count exceeds volume maximum");
  if (count == 0) return 0;
  if (3 * count <= max_count) return 1;
  if (3 * count <= 2 * max_count) return 2;
  return 3;
}

struct SliceScore {
  double dsc2d;
  std::uint64_t gt_count;
};

struct ZoneBin {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();  // sample SD; NaN below two slices
  std::size_t count = 0;
};

using ZoneTable = std::array<ZoneBin, kZoneCount>;

/// Zone per slice of one volume.
inline std::vector<std::size_t> zone_assignments(std::span<const SliceScore> slices) {
  std::uint64_t max_count = 0;
  for (const auto& s : slices) max_count = std::max(max_count, s.gt_count);
  std::vector<std::size_t> z;
  z.reserve(slices.size());
  for (const auto& s : slices) z.push_back(zone_of(s.gt_count, max_count));
  return z;
}

/// Pools slices of every volume; each volume is binned against its own busiest slice.
inline ZoneTable zone_analysis(const std::vector<std::vector<SliceScore>>& volumes) {
  std::array<std::vector<double>, kZoneCount> groups;
  for (const auto& vol : volumes) {
    const auto zones = zone_assignments(vol);
    for (std::size_t i = 0; i < vol.size(); ++i) groups[zones[i]].push_back(vol[i].dsc2d);
  }
  ZoneTable table;
  for (std::size_t b = 0; b < kZoneCount; ++b) {
    const auto& g = groups[b];
    table[b].count = g.size();
    if (g.empty()) continue;
    double m = 0;
    for (double v : g) m += v;
    m /= static_cast<double>(g.size());
    table[b].mean = m;
    if (g.size() >= 2) {
      double ss = 0;
      for (double v : g) ss += (v - m) * (v - m);
      table[b].sd = std::sqrt(ss / static_cast<double>(g.size() - 1));
    }
  }
  return table;
}

}  // namespace wcseg
