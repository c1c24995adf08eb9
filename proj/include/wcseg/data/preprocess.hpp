#pragma once

#include <bit>
#include <cmath>
#include <utility>

#include "wcseg/data/volume.hpp"
#include "wcseg/tensor/ops.hpp"

namespace wcseg {

/// Zero mean, unit population standard deviation.
inline Image2D normalize_slice(const Image2D& image) {
  const std::size_t n = image.size();
  if (n < 2) throw ValidationError("normalize_slice: need at least 2 pixels");
  double mean = 0;
  for (float v : image.values) {
    if (!std::isfinite(v)) throw DegenerateDataError("normalize_slice: non-finite pixel value");
    mean += v;
  }
  mean /= static_cast<double>(n);
  double var = 0;
  for (float v : image.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
    throw DegenerateDataError("normalize_slice: zero-variance image");
  Image2D out(image.height, image.width);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<float>((image.values[i] - mean) / sd);
  return out;
}

/// Half-pixel-centered bilinear resampling with edge clamping.
inline Image2D resize_image(const Image2D& image, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || image.size() == 0) throw ValidationError("resize_image: empty extent");
  if (out_h == image.height && out_w == image.width) return image;
  const auto ty = detail::linear_taps(image.height, out_h);
  const auto tx = detail::linear_taps(image.width, out_w);
  Image2D out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j) {
      const double wy = ty[i].w_hi, wx = tx[j].w_hi;
      const double top = (1 - wx) * image.at(ty[i].lo, tx[j].lo) + wx * image.at(ty[i].lo, tx[j].hi);
      const double bot = (1 - wx) * image.at(ty[i].hi, tx[j].lo) + wx * image.at(ty[i].hi, tx[j].hi);
      out.at(i, j) = static_cast<float>((1 - wy) * top + wy * bot);
    }
  return out;
}

namespace detail {
inline std::size_t nearest_source(std::size_t i, std::size_t in, std::size_t out) {
  const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                                                     static_cast<double>(out)));
  return std::min(s, in - 1);
}
}  // namespace detail

/// Nearest-neighbour resampling on the same half-pixel grid; preserves the value set.
template <typename V>
Plane<V> resize_nearest(const Plane<V>& p, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || p.size() == 0) throw ValidationError("resize_nearest: empty extent");
  Plane<V> out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t si = detail::nearest_source(i, p.height, out_h);
    for (std::size_t j = 0; j < out_w; ++j) out.at(i, j) = p.at(si, detail::nearest_source(j, p.width, out_w));
  }
  return out;
}

inline std::pair<Image2D, Mask2D> resize_pair(const Image2D& image, const Mask2D& mask, std::size_t target) {
  if (target < 1 || !std::has_single_bit(target))
    throw ValidationError("resize_pair: target extent must be a power of two, got " + std::to_string(target));
  if (image.height != mask.height || image.width != mask.width)
    throw ValidationError("resize_pair: image and mask extents differ");
  return {resize_image(image, target, target), resize_nearest(mask, target, target)};
}

/// Resize to the network extent then normalize; the per-slice input transform.
inline Image2D prepare_slice(const Image2D& image, std::size_t target) {
  if (target < 1 || !std::has_single_bit(target))
    throw ValidationError("prepare_slice: target extent must be a power of two");
  return normalize_slice(resize_image(image, target, target));
}

}  // namespace wcseg
