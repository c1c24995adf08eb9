#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wcseg/tensor/tensor.hpp"

namespace wcseg {

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // [out, in, kh, kw]
  Tensor<T> bias;    // [out], may be undefined
};

template <typename T>
struct BatchNormParams {
  Tensor<T> scale;  // [C]
  Tensor<T> shift;  // [C]
  std::vector<T> running_mean;
  std::vector<T> running_var;  // strictly positive
  T momentum = T(0.9);
  T eps = T(1e-5);

  explicit BatchNormParams(std::size_t channels = 0)
      : scale(Shape{channels}, T(1), true),
        shift(Shape{channels}, T(0), true),
        running_mean(channels, T(0)),
        running_var(channels, T(1)) {}
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4)
    throw ValidationError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(s));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// col is [C*kh*kw, out_h*out_w], zero outside the padded image.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::size_t op = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * op;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oi * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                     static_cast<std::ptrdiff_t>(g.pad);
            dst[oj] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[static_cast<std::size_t>(x)];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const std::size_t op = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * op;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const T* src = row + oi * g.out_w;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                     static_cast<std::ptrdiff_t>(g.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width))
              dst[static_cast<std::size_t>(x)] += src[oj];
          }
        }
      }
}

// Half-pixel-center linear taps for resampling an axis of length `in` to `out`:
// output i samples input coordinate (i + 0.5) * in / out - 0.5, clamped to the edges.
struct LinearTap {
  std::size_t lo, hi;
  double w_hi;
};

inline std::vector<LinearTap> linear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// 2-D cross-correlation over NCHW input with an [O,C,kh,kw] kernel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params, std::size_t stride = 1,
                 std::size_t padding = 0) {
  using namespace detail;
  require_rank4(input.shape(), "conv2d");
  const Tensor<T>& weight = params.weight;
  require_rank4(weight.shape(), "conv2d(weight)");
  if (stride == 0) throw ValidationError("conv2d: stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c)
    throw ValidationError("conv2d: kernel expects " + std::to_string(weight.dim(1)) +
                          " input channels, got " + std::to_string(c));
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ValidationError("conv2d: non-positive output extent");
  const bool has_bias = params.bias.defined();
  if (has_bias && params.bias.numel() != o)
    throw ValidationError("conv2d: bias length does not match output channels");

  ConvGeometry g{c, h, w, kh, kw, stride, padding, (h + 2 * padding - kh) / stride + 1,
                 (w + 2 * padding - kw) / stride + 1};
  const std::size_t op = g.out_pixels();
  std::vector<T> out(n * o * op);
  std::vector<T> col(g.is_pointwise() ? 0 : g.patch() * op);
  ConstMatMap<T> wmat(weight.raw(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(g.patch()));
  for (std::size_t b = 0; b < n; ++b) {
    const T* src = input.raw() + b * c * h * w;
    if (!g.is_pointwise()) im2col(src, g, col.data());
    const T* cols = g.is_pointwise() ? src : col.data();
    ConstMatMap<T> cmat(cols, static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(op));
    MatMap<T> omat(out.data() + b * o * op, static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(op));
    omat.noalias() = wmat * cmat;
    if (has_bias)
      for (std::size_t k = 0; k < o; ++k) omat.row(static_cast<Eigen::Index>(k)).array() += params.bias[k];
  }

  auto x_node = input.node();
  auto w_node = weight.node();
  std::vector<std::shared_ptr<Node<T>>> inputs{x_node, w_node};
  auto b_node = has_bias ? params.bias.node() : nullptr;
  if (has_bias) inputs.push_back(b_node);
  return make_result<T>(
      Shape{n, o, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [x_node, w_node, b_node, g, n, o](Node<T>& self) {
        const std::size_t op = g.out_pixels();
        const auto P = static_cast<Eigen::Index>(g.patch());
        const auto OP = static_cast<Eigen::Index>(op);
        const auto O = static_cast<Eigen::Index>(o);
        std::vector<T> col(g.patch() * op);
        T* dw = w_node->requires_grad ? w_node->ensure_grad().data() : nullptr;
        T* dx = x_node->requires_grad ? x_node->ensure_grad().data() : nullptr;
        T* db = (b_node && b_node->requires_grad) ? b_node->ensure_grad().data() : nullptr;
        ConstMatMap<T> wmat(w_node->value.data(), O, P);
        const std::size_t image = g.channels * g.height * g.width;
        for (std::size_t b = 0; b < n; ++b) {
          ConstMatMap<T> gout(self.grad.data() + b * o * op, O, OP);
          if (db)
            for (std::size_t k = 0; k < o; ++k) {
              // Sequential on purpose: Eigen's vectorized redux peels by address, which breaks
              // run-to-run reproducibility.
              const T* row = self.grad.data() + (b * o + k) * op;
              T acc = 0;
              for (std::size_t p = 0; p < op; ++p) acc += row[p];
              db[k] += acc;
            }
          const T* src = x_node->value.data() + b * image;
          if (dw) {
            const T* cols = src;
            if (!g.is_pointwise()) {
              im2col(src, g, col.data());
              cols = col.data();
            }
            ConstMatMap<T> cmat(cols, P, OP);
            MatMap<T> dwmat(dw, O, P);
            dwmat.noalias() += gout * cmat.transpose();
          }
          if (dx) {
            if (g.is_pointwise()) {
              MatMap<T> dxmat(dx + b * image, P, OP);
              dxmat.noalias() += wmat.transpose() * gout;
            } else {
              MatMap<T> dcol(col.data(), P, OP);
              dcol.noalias() = wmat.transpose() * gout;
              col2im_add(col.data(), g, dx + b * image);
            }
          }
        }
      },
      "conv2d");
}

/// 2x2 max pooling with stride 2. Gradient goes to the first (row-major) maximum.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input) {
  using namespace detail;
  require_rank4(input.shape(), "maxpool2d");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2)
    throw ValidationError("maxpool2d: odd spatial extent " + shape_str(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::uint32_t> argmax(out.size());
  const T* x = input.raw();
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j, ++k) {
        std::size_t best = base + (2 * i) * w + 2 * j;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t q : cand)
          if (x[q] > x[best] || std::isnan(x[q])) best = q;  // NaN wins so divergence stays visible
        out[k] = x[best];
        argmax[k] = static_cast<std::uint32_t>(best);
      }
  }
  auto x_node = input.node();
  return make_result<T>(
      Shape{n, c, oh, ow}, std::move(out), {x_node},
      [x_node, argmax = std::move(argmax)](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
      },
      "maxpool2d");
}

/// Bilinear resampling of every plane to out_h x out_w (half-pixel centers, edge clamp).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  using namespace detail;
  require_rank4(input.shape(), "resize_bilinear");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h == 0 || out_w == 0) throw ValidationError("resize_bilinear: empty target");
  auto ty = linear_taps(h, out_h);
  auto tx = linear_taps(w, out_w);
  std::vector<T> out(n * c * out_h * out_w);
  const T* x = input.raw();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x + plane * h * w;
    T* dst = out.data() + plane * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T wy = static_cast<T>(ty[i].w_hi);
      const T* r0 = src + ty[i].lo * w;
      const T* r1 = src + ty[i].hi * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T wx = static_cast<T>(tx[j].w_hi);
        const T top = r0[tx[j].lo] * (T(1) - wx) + r0[tx[j].hi] * wx;
        const T bot = r1[tx[j].lo] * (T(1) - wx) + r1[tx[j].hi] * wx;
        dst[i * out_w + j] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  auto x_node = input.node();
  return make_result<T>(
      Shape{n, c, out_h, out_w}, std::move(out), {x_node},
      [x_node, ty = std::move(ty), tx = std::move(tx), n, c, h, w](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        const std::size_t oh = ty.size(), ow = tx.size();
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          T* d = dx.data() + plane * h * w;
          const T* g = self.grad.data() + plane * oh * ow;
          for (std::size_t i = 0; i < oh; ++i) {
            const T wy = static_cast<T>(ty[i].w_hi);
            T* r0 = d + ty[i].lo * w;
            T* r1 = d + ty[i].hi * w;
            for (std::size_t j = 0; j < ow; ++j) {
              const T wx = static_cast<T>(tx[j].w_hi);
              const T gv = g[i * ow + j];
              r0[tx[j].lo] += gv * (T(1) - wy) * (T(1) - wx);
              r0[tx[j].hi] += gv * (T(1) - wy) * wx;
              r1[tx[j].lo] += gv * wy * (T(1) - wx);
              r1[tx[j].hi] += gv * wy * wx;
            }
          }
        }
      },
      "resize_bilinear");
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, std::size_t factor = 2) {
  if (factor != 2) throw ValidationError("upsample_bilinear: only factor 2 is supported");
  detail::require_rank4(input.shape(), "upsample_bilinear");
  return resize_bilinear(input, input.dim(2) * factor, input.dim(3) * factor);
}

/// Per-channel batch normalization. Training mode uses biased batch statistics over
/// (N,H,W) and updates the running estimates; inference mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& params, bool training) {
  using namespace detail;
  require_rank4(input.shape(), "batchnorm");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (params.scale.numel() != c || params.shift.numel() != c)
    throw ValidationError("batchnorm: parameter channel count mismatch");
  const std::size_t count = n * hw;
  if (training && count < 2)
    throw ValidationError("batchnorm: degenerate batch (one element per channel)");
  const T* x = input.raw();
  std::vector<T> mean(c), inv_std(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0, ss = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(params.eps)));
      const double unbiased = ss / static_cast<double>(count - 1);
      params.running_mean[ch] = params.momentum * params.running_mean[ch] +
                                (T(1) - params.momentum) * static_cast<T>(mu);
      params.running_var[ch] = params.momentum * params.running_var[ch] +
                               (T(1) - params.momentum) * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = params.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(params.running_var[ch] + params.eps);
    }
  }
  std::vector<T> out(input.numel());
  std::vector<T> xhat(input.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      const T s = params.scale[ch], t = params.shift[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (x[off + i] - mean[ch]) * inv_std[ch];
        out[off + i] = s * xhat[off + i] + t;
      }
    }
  auto x_node = input.node();
  auto s_node = params.scale.node();
  auto t_node = params.shift.node();
  return make_result<T>(
      input.shape(), std::move(out), {x_node, s_node, t_node},
      [x_node, s_node, t_node, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw,
       training](Node<T>& self) {
        const T* g = self.grad.data();
        const T count = static_cast<T>(n * hw);
        T* ds = s_node->requires_grad ? s_node->ensure_grad().data() : nullptr;
        T* dt = t_node->requires_grad ? t_node->ensure_grad().data() : nullptr;
        T* dx = x_node->requires_grad ? x_node->ensure_grad().data() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += g[off + i];
              sum_gx += g[off + i] * xhat[off + i];
            }
          }
          if (ds) ds[ch] += sum_gx;
          if (dt) dt[ch] += sum_g;
          if (!dx) continue;
          const T scale = s_node->value[ch];
          const T k = scale * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (training)
                dx[off + i] += k * (g[off + i] - sum_g / count - xhat[off + i] * sum_gx / count);
              else
                dx[off + i] += k * g[off + i];
            }
          }
        }
      },
      "batchnorm");
}

/// Zeroes whole (sample, channel) planes with probability p; survivors are scaled
/// by 1/(1-p). Identity outside training.
template <typename T, typename Rng>
Tensor<T> spatial_dropout(const Tensor<T>& input, double p, bool training, Rng& rng) {
  using namespace detail;
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("spatial_dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return input;
  require_rank4(input.shape(), "spatial_dropout");
  const std::size_t planes = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> keep(planes);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& k : keep) k = u(rng) < p ? T(0) : scale;
  std::vector<T> out(input.numel());
  const T* x = input.raw();
  for (std::size_t q = 0; q < planes; ++q)
    for (std::size_t i = 0; i < hw; ++i) out[q * hw + i] = x[q * hw + i] * keep[q];
  auto x_node = input.node();
  return make_result<T>(
      input.shape(), std::move(out), {x_node},
      [x_node, keep = std::move(keep), hw](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        for (std::size_t q = 0; q < keep.size(); ++q)
          for (std::size_t i = 0; i < hw; ++i) dx[q * hw + i] += self.grad[q * hw + i] * keep[q];
      },
      "spatial_dropout");
}

/// Additive zero-mean Gaussian noise with standard deviation `level` (training only).
template <typename T, typename Rng>
Tensor<T> gaussian_noise(const Tensor<T>& input, double level, bool training, Rng& rng) {
  using namespace detail;
  if (level < 0.0) throw ValidationError("gaussian_noise: level must be non-negative");
  if (!training || level == 0.0) return input;
  std::normal_distribution<double> normal(0.0, level);
  std::vector<T> out(input.data().begin(), input.data().end());
  for (auto& v : out) v += static_cast<T>(normal(rng));
  auto x_node = input.node();
  return make_result<T>(
      input.shape(), std::move(out), {x_node},
      [x_node](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
      },
      "gaussian_noise");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  using namespace detail;
  std::vector<T> out(input.numel());
  const T* x = input.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) || std::isnan(x[i]) ? x[i] : T(0);
  auto x_node = input.node();
  return make_result<T>(
      input.shape(), std::move(out), {x_node},
      [x_node](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        const auto& xv = x_node->value;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (xv[i] > T(0)) dx[i] += self.grad[i];
      },
      "relu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  using namespace detail;
  std::vector<T> out(input.numel());
  const T* x = input.raw();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  auto x_node = input.node();
  return make_result<T>(
      input.shape(), std::move(out), {x_node},
      [x_node](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const T s = self.value[i];
          dx[i] += self.grad[i] * s * (T(1) - s);
        }
      },
      "sigmoid");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(
      a.shape(), std::move(out), {an, bn},
      [an, bn](Node<T>& self) {
        for (auto* in : {an.get(), bn.get()}) {
          if (!in->requires_grad) continue;
          auto& d = in->ensure_grad();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
      },
      "add");
}

/// Concatenation along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail;
  require_rank4(a.shape(), "concat_channels");
  require_rank4(b.shape(), "concat_channels");
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  if (b.dim(0) != n || b.dim(2) != a.dim(2) || b.dim(3) != a.dim(3))
    throw ValidationError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  std::vector<T> out(n * (ca + cb) * hw);
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.raw() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
    std::copy_n(b.raw() + s * cb * hw, cb * hw, out.data() + s * (ca + cb) * hw + ca * hw);
  }
  auto an = a.node(), bn = b.node();
  return make_result<T>(
      Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {an, bn},
      [an, bn, n, ca, cb, hw](Node<T>& self) {
        for (std::size_t s = 0; s < n; ++s) {
          const T* g = self.grad.data() + s * (ca + cb) * hw;
          if (an->requires_grad) {
            T* d = an->ensure_grad().data() + s * ca * hw;
            for (std::size_t i = 0; i < ca * hw; ++i) d[i] += g[i];
          }
          if (bn->requires_grad) {
            T* d = bn->ensure_grad().data() + s * cb * hw;
            for (std::size_t i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
          }
        }
      },
      "concat_channels");
}

/// out[n,c,h,w] = coeff[n,0,h,w] * x[n,c,h,w].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& coeff, const Tensor<T>& x) {
  using namespace detail;
  require_rank4(coeff.shape(), "scale_channels");
  require_rank4(x.shape(), "scale_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (coeff.dim(0) != n || coeff.dim(1) != 1 || coeff.dim(2) != x.dim(2) || coeff.dim(3) != x.dim(3))
    throw ValidationError("scale_channels: coefficient map " + shape_str(coeff.shape()) +
                          " does not match features " + shape_str(x.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i)
        out[(s * c + ch) * hw + i] = coeff[s * hw + i] * x[(s * c + ch) * hw + i];
  auto an = coeff.node(), xn = x.node();
  return make_result<T>(
      x.shape(), std::move(out), {an, xn},
      [an, xn, n, c, hw](Node<T>& self) {
        T* da = an->requires_grad ? an->ensure_grad().data() : nullptr;
        T* dx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (s * c + ch) * hw + i;
              if (da) da[s * hw + i] += self.grad[k] * xn->value[k];
              if (dx) dx[k] += self.grad[k] * an->value[s * hw + i];
            }
      },
      "scale_channels");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  using namespace detail;
  T s = 0;
  for (T v : input.data()) s += v;
  auto x_node = input.node();
  return make_result<T>(
      Shape{1}, std::vector<T>{s}, {x_node},
      [x_node](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        for (auto& d : dx) d += self.grad[0];
      },
      "sum");
}

/// sum(weights * x); handy for turning a tensor into a scalar with a non-trivial gradient.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, const std::vector<T>& weights) {
  using namespace detail;
  if (weights.size() != input.numel()) throw ValidationError("weighted_sum: length mismatch");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * input[i];
  auto x_node = input.node();
  return make_result<T>(
      Shape{1}, std::vector<T>{s}, {x_node},
      [x_node, weights](Node<T>& self) {
        auto& dx = x_node->ensure_grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[0] * weights[i];
      },
      "weighted_sum");
}

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  using namespace detail;
  require_same_shape(prediction, target, "bce_loss");
  const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
  const std::size_t count = prediction.numel();
  double total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp(prediction[i], lo, hi);
    const double y = target[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  auto pn = prediction.node(), yn = target.node();
  return make_result<T>(
      Shape{1}, std::vector<T>{static_cast<T>(total / static_cast<double>(count))}, {pn},
      [pn, yn, lo, hi, count](Node<T>& self) {
        auto& dp = pn->ensure_grad();
        const T scale = self.grad[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < count; ++i) {
          const T p = pn->value[i];
          if (p < lo || p > hi) continue;
          const T y = yn->value[i];
          dp[i] += scale * (-y / p + (T(1) - y) / (T(1) - p));
        }
      },
      "bce_loss");
}

}  // namespace wcseg
