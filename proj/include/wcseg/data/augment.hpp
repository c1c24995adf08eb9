#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "wcseg/data/volume.hpp"

namespace wcseg {

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rotate = 0.5;
  double p_elastic = 0.5;
  double p_grid = 0.5;
  double max_rotation_deg = 180.0;
  double elastic_amplitude_min = 2.0;  // peak displacement, pixels
  double elastic_amplitude_max = 8.0;
  double elastic_sigma_min = 4.0;  // displacement smoothing, pixels
  double elastic_sigma_max = 8.0;
  std::size_t grid_steps = 4;
  double grid_limit = 0.15;  // relative cell-size perturbation

  void validate() const {
    for (double p : {p_hflip, p_vflip, p_rotate, p_elastic, p_grid})
      if (!(p >= 0 && p <= 1)) throw ValidationError("augment: probabilities must lie in [0,1]");
    if (elastic_amplitude_min < 0 || elastic_amplitude_max < elastic_amplitude_min)
      throw ValidationError("augment: bad elastic amplitude range");
    if (elastic_sigma_min <= 0 || elastic_sigma_max < elastic_sigma_min)
      throw ValidationError("augment: bad elastic sigma range");
    if (grid_steps < 1 || grid_limit < 0 || grid_limit >= 1) throw ValidationError("augment: bad grid distortion");
  }
};

using SlicePair = std::pair<Image2D, Mask2D>;

template <typename V>
Plane<V> flip_horizontal(const Plane<V>& p) {
  Plane<V> out(p.height, p.width);
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x) out.at(y, x) = p.at(y, p.width - 1 - x);
  return out;
}

template <typename V>
Plane<V> flip_vertical(const Plane<V>& p) {
  Plane<V> out(p.height, p.width);
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x) out.at(y, x) = p.at(p.height - 1 - y, x);
  return out;
}

enum class Border { Constant, Clamp };

/// Backward warp: output pixel (y,x) samples the source at (map_y, map_x), given in pixel-center units.
/// Image is bilinear, mask nearest. With Border::Constant samples beyond half a pixel outside the frame
/// take `image_fill` and 0 respectively.
inline SlicePair remap(const Image2D& image, const Mask2D& mask, const std::vector<double>& map_y,
                       const std::vector<double>& map_x, Border border, float image_fill) {
  const std::size_t h = image.height, w = image.width;
  SlicePair out{Image2D(h, w), Mask2D(h, w)};
  const double ymax = static_cast<double>(h - 1), xmax = static_cast<double>(w - 1);
  for (std::size_t i = 0; i < h * w; ++i) {
    double sy = map_y[i], sx = map_x[i];
    if (border == Border::Constant && (sy < -0.5 || sy > ymax + 0.5 || sx < -0.5 || sx > xmax + 0.5)) {
      out.first.values[i] = image_fill;
      out.second.values[i] = 0;
      continue;
    }
    sy = std::clamp(sy, 0.0, ymax);
    sx = std::clamp(sx, 0.0, xmax);
    const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    const double top = (1 - fx) * image.at(y0, x0) + fx * image.at(y0, x1);
    const double bot = (1 - fx) * image.at(y1, x0) + fx * image.at(y1, x1);
    out.first.values[i] = static_cast<float>((1 - fy) * top + fy * bot);
    const auto ny = static_cast<std::size_t>(std::lround(sy)), nx = static_cast<std::size_t>(std::lround(sx));
    out.second.values[i] = mask.at(ny, nx);
  }
  return out;
}

inline float image_min(const Image2D& image) {
  return image.values.empty() ? 0.0f : *std::min_element(image.values.begin(), image.values.end());
}

/// Rotation about the frame center; out-of-frame pixels take the image minimum (mask 0).
inline SlicePair rotate(const Image2D& image, const Mask2D& mask, double angle_deg) {
  const std::size_t h = image.height, w = image.width;
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  const double a = angle_deg * std::numbers::pi / 180.0, c = std::cos(a), s = std::sin(a);
  std::vector<double> my(h * w), mx(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      my[y * w + x] = cy + c * dy - s * dx;
      mx[y * w + x] = cx + s * dy + c * dx;
    }
  return remap(image, mask, my, mx, Border::Constant, image_min(image));
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable Gaussian smoothing with edge clamping.
inline std::vector<double> gaussian_blur(const std::vector<double>& f, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  std::vector<double> tmp(f.size()), out(f.size());
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * f[static_cast<std::size_t>(y * W + std::clamp(x + t, std::ptrdiff_t{0}, W - 1))];
      tmp[static_cast<std::size_t>(y * W + x)] = acc;
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(std::clamp(y + t, std::ptrdiff_t{0}, H - 1) * W + x)];
      out[static_cast<std::size_t>(y * W + x)] = acc;
    }
  return out;
}

// Piecewise-linear source coordinate per output index for perturbed cell sizes.
template <typename Rng>
std::vector<double> grid_axis_map(std::size_t n, std::size_t steps, double limit, Rng& rng) {
  std::uniform_real_distribution<double> u(1 - limit, 1 + limit);
  std::vector<double> cell(steps);
  double total = 0;
  for (auto& c : cell) total += (c = u(rng));
  std::vector<double> knots(steps + 1, 0.0);
  for (std::size_t i = 0; i < steps; ++i) knots[i + 1] = knots[i] + cell[i] / total;
  std::vector<double> map(n);
  const double last = static_cast<double>(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = n > 1 ? static_cast<double>(j) / last : 0.0;  // uniform output position in [0,1]
    const auto i = std::min(static_cast<std::size_t>(t * static_cast<double>(steps)), steps - 1);
    const double local = t * static_cast<double>(steps) - static_cast<double>(i);
    map[j] = (knots[i] + local * (knots[i + 1] - knots[i])) * last;
  }
  return map;
}

}  // namespace detail

/// Smooth random displacement field whose peak magnitude equals `amplitude` pixels.
template <typename Rng>
SlicePair elastic(const Image2D& image, const Mask2D& mask, double amplitude, double sigma, Rng& rng) {
  const std::size_t h = image.height, w = image.width;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> fy(h * w), fx(h * w);
  for (auto& v : fy) v = u(rng);
  for (auto& v : fx) v = u(rng);
  fy = detail::gaussian_blur(fy, h, w, sigma);
  fx = detail::gaussian_blur(fx, h, w, sigma);
  double peak = 0;
  for (std::size_t i = 0; i < h * w; ++i) peak = std::max(peak, std::hypot(fy[i], fx[i]));
  const double scale = peak > 0 ? amplitude / peak : 0.0;
  std::vector<double> my(h * w), mx(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      my[i] = static_cast<double>(y) + scale * fy[i];
      mx[i] = static_cast<double>(x) + scale * fx[i];
    }
  return remap(image, mask, my, mx, Border::Clamp, 0.0f);
}

/// Separable grid warp: `steps` cells per axis, each resized by a factor in [1-limit, 1+limit].
template <typename Rng>
SlicePair grid_distortion(const Image2D& image, const Mask2D& mask, std::size_t steps, double limit, Rng& rng) {
  const std::size_t h = image.height, w = image.width;
  const auto ax = detail::grid_axis_map(w, steps, limit, rng);
  const auto ay = detail::grid_axis_map(h, steps, limit, rng);
  std::vector<double> my(h * w), mx(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      my[y * w + x] = ay[y];
      mx[y * w + x] = ax[x];
    }
  return remap(image, mask, my, mx, Border::Clamp, 0.0f);
}

/// One randomly composed transform: flips, rotation, elastic, grid, each gated independently.
template <typename Rng>
SlicePair augment_once(const Image2D& image, const Mask2D& mask, Rng& rng, const AugmentConfig& cfg = {}) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  SlicePair cur{image, mask};
  if (coin(rng) < cfg.p_hflip) cur = {flip_horizontal(cur.first), flip_horizontal(cur.second)};
  if (coin(rng) < cfg.p_vflip) cur = {flip_vertical(cur.first), flip_vertical(cur.second)};
  if (coin(rng) < cfg.p_rotate) {
    std::uniform_real_distribution<double> angle(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    cur = rotate(cur.first, cur.second, angle(rng));
  }
  if (coin(rng) < cfg.p_elastic) {
    std::uniform_real_distribution<double> amp(cfg.elastic_amplitude_min, cfg.elastic_amplitude_max);
    std::uniform_real_distribution<double> sig(cfg.elastic_sigma_min, cfg.elastic_sigma_max);
    const double a = amp(rng), s = sig(rng);
    cur = elastic(cur.first, cur.second, a, s, rng);
  }
  if (coin(rng) < cfg.p_grid) cur = grid_distortion(cur.first, cur.second, cfg.grid_steps, cfg.grid_limit, rng);
  return cur;
}

/// Exactly `multiplier` independently augmented copies of the pair.
template <typename Rng>
std::vector<SlicePair> augment(const Image2D& image, const Mask2D& mask, std::size_t multiplier, Rng& rng,
                               const AugmentConfig& cfg = {}) {
  if (multiplier < 1) throw ValidationError("augment: multiplier must be >= 1");
  if (image.height != mask.height || image.width != mask.width)
    throw ValidationError("augment: image and mask extents differ");
  cfg.validate();
  std::vector<SlicePair> out;
  out.reserve(multiplier);
  for (std::size_t i = 0; i < multiplier; ++i) out.push_back(augment_once(image, mask, rng, cfg));
  return out;
}

}  // namespace wcseg
