#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wcseg/data/volume.hpp"
#include "wcseg/error.hpp"
#include "wcseg/tensor/ops.hpp"

namespace wcseg {

/// Architecture descriptor shared by the four variants.
struct ModelConfig {
  int depth = 4;  // number of max-pooling stages: 4 full, 3 truncated
  int base_channels = 8;
  bool attention = false;
  double dropout_p = 0.2;
  double noise_level = 0.35;
  int input_size = 64;

  void validate() const {
    if (depth != 3 && depth != 4) throw ValidationError("model: depth must be 3 or 4");
    if (base_channels < 2) throw ValidationError("model: base_channels must be at least 2");
    if (!(dropout_p >= 0 && dropout_p < 1)) throw ValidationError("model: dropout_p must lie in [0, 1)");
    if (!(noise_level >= 0 && noise_level <= 0.5))
      throw ValidationError("model: noise_level must lie in [0, 0.5]");
    if (input_size <= 0 || input_size % (1 << depth) != 0)
      throw ValidationError("model: input_size must be divisible by 2^depth");
  }

  std::string variant_name() const {
    std::string name = depth == 3 ? "Tr_U-Net" : "U-Net";
    return attention ? name + "_AL" : name;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig unet_config(bool truncated, bool attention, int base_channels = 8, int input_size = 64) {
  ModelConfig c;
  c.depth = truncated ? 3 : 4;
  c.attention = attention;
  c.base_channels = base_channels;
  c.input_size = input_size;
  return c;
}

// Accepts "unet", "unet_al", "tr_unet", "tr_unet_al" and spellings such as "Tr_U-Net_AL";
// case, '-' and '_' are ignored.
inline ModelConfig config_for_variant(const std::string& name, int base_channels = 8, int input_size = 64) {
  std::string key;
  for (char ch : name)
    if (ch != '-' && ch != '_') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (key == "unet") return unet_config(false, false, base_channels, input_size);
  if (key == "unetal") return unet_config(false, true, base_channels, input_size);
  if (key == "trunet") return unet_config(true, false, base_channels, input_size);
  if (key == "trunetal") return unet_config(true, true, base_channels, input_size);
  throw ValidationError("unknown model variant '" + name + "'");
}

/// conv3x3 -> ReLU -> conv3x3 -> ReLU -> batch-norm.
template <typename T>
struct ConvBlock {
  ConvParams<T> conv1;
  ConvParams<T> conv2;
  BatchNormParams<T> bn;
};

/// Additive attention on a skip connection: 1x1 aligning convolutions on the skip
/// features (stride 2) and on the coarser gating features, summed, ReLU, 1x1 to one
/// channel, sigmoid, bilinear upsampling, then elementwise scaling of the skip.
template <typename T>
struct AttentionGate {
  ConvParams<T> w_x;  // [F/2, F, 1, 1], stride 2, no bias
  ConvParams<T> w_g;  // [F/2, 2F, 1, 1] with bias
  ConvParams<T> psi;  // [1, F/2, 1, 1] with bias
};

template <typename T>
struct Model {
  ModelConfig config;
  std::vector<ConvBlock<T>> encoder;  // index = level, finest first
  ConvBlock<T> bottleneck;
  std::vector<ConvBlock<T>> decoder;  // index = level
  std::vector<AttentionGate<T>> gates;  // index = level, empty without attention
  ConvParams<T> head;                   // [1, base, 1, 1] with bias

  Model() = default;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Trainable tensors in registry order (the checkpoint order).
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    auto conv = [&](const ConvParams<T>& c) {
      out.push_back(c.weight);
      if (c.bias.defined()) out.push_back(c.bias);
    };
    auto block = [&](const ConvBlock<T>& b) {
      conv(b.conv1);
      conv(b.conv2);
      out.push_back(b.bn.scale);
      out.push_back(b.bn.shift);
    };
    for (const auto& b : encoder) block(b);
    block(bottleneck);
    for (const auto& b : decoder) block(b);
    for (const auto& g : gates) {
      conv(g.w_x);
      conv(g.w_g);
      conv(g.psi);
    }
    conv(head);
    return out;
  }

  /// Batch-norm running statistics (non-trainable), stored after the parameters.
  std::vector<std::vector<T>*> buffers() {
    std::vector<std::vector<T>*> out;
    auto block = [&](ConvBlock<T>& b) {
      out.push_back(&b.bn.running_mean);
      out.push_back(&b.bn.running_var);
    };
    for (auto& b : encoder) block(b);
    block(bottleneck);
    for (auto& b : decoder) block(b);
    return out;
  }

  Model clone() const;
};

namespace detail {

template <typename T>
ConvParams<T> clone_conv(const ConvParams<T>& c) {
  ConvParams<T> out{c.weight.clone(true), {}};
  if (c.bias.defined()) out.bias = c.bias.clone(true);
  return out;
}

template <typename T>
ConvBlock<T> clone_block(const ConvBlock<T>& b) {
  ConvBlock<T> out{clone_conv(b.conv1), clone_conv(b.conv2), BatchNormParams<T>(0)};
  out.bn = b.bn;
  out.bn.scale = b.bn.scale.clone(true);
  out.bn.shift = b.bn.shift.clone(true);
  return out;
}

template <typename T, typename Rng>
ConvParams<T> he_uniform_conv(std::size_t out, std::size_t in, std::size_t k, bool bias, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in * k * k));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<T> w(out * in * k * k);
  for (auto& v : w) v = static_cast<T>(u(rng));
  ConvParams<T> p{Tensor<T>(Shape{out, in, k, k}, std::move(w), true), {}};
  if (bias) p.bias = Tensor<T>(Shape{out}, T(0), true);
  return p;
}

template <typename T, typename Rng>
ConvBlock<T> make_block(std::size_t in, std::size_t out, Rng& rng) {
  auto c1 = he_uniform_conv<T>(out, in, 3, true, rng);
  auto c2 = he_uniform_conv<T>(out, out, 3, true, rng);
  return ConvBlock<T>{std::move(c1), std::move(c2), BatchNormParams<T>(out)};
}

template <typename T>
Tensor<T> run_block(const Tensor<T>& x, ConvBlock<T>& b, bool training) {
  auto y = relu(conv2d(x, b.conv1, 1, 1));
  y = relu(conv2d(y, b.conv2, 1, 1));
  return batchnorm(y, b.bn, training);
}

}  // namespace detail

template <typename T>
Model<T> Model<T>::clone() const {
  Model<T> m;
  m.config = config;
  for (const auto& b : encoder) m.encoder.push_back(detail::clone_block(b));
  m.bottleneck = detail::clone_block(bottleneck);
  for (const auto& b : decoder) m.decoder.push_back(detail::clone_block(b));
  for (const auto& g : gates)
    m.gates.push_back({detail::clone_conv(g.w_x), detail::clone_conv(g.w_g), detail::clone_conv(g.psi)});
  m.head = detail::clone_conv(head);
  return m;
}

template <typename T>
std::size_t level_channels(const ModelConfig& c, int level) {
  return static_cast<std::size_t>(c.base_channels) << level;
}

/// Random He-uniform initialisation; deterministic for a given rng state.
template <typename T, typename Rng>
Model<T> build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model<T> m;
  m.config = config;
  const int depth = config.depth;
  std::size_t in = 1;
  for (int l = 0; l < depth; ++l) {
    const std::size_t f = level_channels<T>(config, l);
    m.encoder.push_back(detail::make_block<T>(in, f, rng));
    in = f;
  }
  m.bottleneck = detail::make_block<T>(in, level_channels<T>(config, depth), rng);
  m.decoder.resize(0);
  for (int l = 0; l < depth; ++l) {
    const std::size_t f = level_channels<T>(config, l);
    m.decoder.push_back(detail::make_block<T>(3 * f, f, rng));
  }
  if (config.attention) {
    for (int l = 0; l < depth; ++l) {
      const std::size_t f = level_channels<T>(config, l);
      const std::size_t inter = std::max<std::size_t>(1, f / 2);
      AttentionGate<T> g;
      g.w_x = detail::he_uniform_conv<T>(inter, f, 1, false, rng);
      g.w_g = detail::he_uniform_conv<T>(inter, 2 * f, 1, true, rng);
      g.psi = detail::he_uniform_conv<T>(1, inter, 1, true, rng);
      m.gates.push_back(std::move(g));
    }
  }
  m.head = detail::he_uniform_conv<T>(1, level_channels<T>(config, 0), 1, true, rng);
  return m;
}

/// x: skip features [N,F,H,W]; g: gating features [N,2F,H/2,W/2]. Returns alpha * x and,
/// if requested, the attention map alpha [N,1,H,W].
template <typename T>
Tensor<T> attention_gate(const Tensor<T>& x, const Tensor<T>& g, const AttentionGate<T>& gate,
                         Tensor<T>* alpha_out = nullptr) {
  if (x.rank() != 4 || g.rank() != 4) throw ValidationError("attention_gate: expected 4-D inputs");
  if (g.dim(0) != x.dim(0) || g.dim(1) != 2 * x.dim(1) || 2 * g.dim(2) != x.dim(2) ||
      2 * g.dim(3) != x.dim(3))
    throw ValidationError("attention_gate: gating features " + shape_str(g.shape()) +
                          " misaligned with skip features " + shape_str(x.shape()));
  auto theta = conv2d(x, gate.w_x, 2, 0);
  auto phi = conv2d(g, gate.w_g, 1, 0);
  auto coeff = sigmoid(conv2d(relu(add(theta, phi)), gate.psi, 1, 0));
  auto alpha = upsample_bilinear(coeff);
  if (alpha_out) *alpha_out = alpha;
  return scale_channels(alpha, x);
}

/// batch [N,1,S,S] -> per-pixel probabilities [N,1,S,S].
template <typename T, typename Rng>
Tensor<T> forward(Model<T>& model, const Tensor<T>& batch, bool training, Rng& rng) {
  const auto& c = model.config;
  if (batch.rank() != 4 || batch.dim(1) != 1 ||
      batch.dim(2) != static_cast<std::size_t>(c.input_size) ||
      batch.dim(3) != static_cast<std::size_t>(c.input_size))
    throw ValidationError("forward: expected [N,1," + std::to_string(c.input_size) + "," +
                          std::to_string(c.input_size) + "], got " + shape_str(batch.shape()));
  auto x = gaussian_noise(batch, c.noise_level, training, rng);
  std::vector<Tensor<T>> skips;
  for (int l = 0; l < c.depth; ++l) {
    auto s = detail::run_block(x, model.encoder[static_cast<std::size_t>(l)], training);
    skips.push_back(s);
    x = spatial_dropout(maxpool2d(s), c.dropout_p, training, rng);
  }
  auto g = spatial_dropout(detail::run_block(x, model.bottleneck, training), c.dropout_p, training, rng);
  for (int l = c.depth - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    Tensor<T> skip = model.gates.empty() ? skips[li] : attention_gate(skips[li], g, model.gates[li]);
    g = detail::run_block(concat_channels(upsample_bilinear(g), skip), model.decoder[li], training);
  }
  return sigmoid(conv2d(g, model.head, 1, 0));
}

template <typename T>
std::size_t count_parameters(const std::vector<Tensor<T>>& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

template <typename T>
std::size_t parameter_count(const Model<T>& model) {
  return count_parameters(model.parameters());
}

inline constexpr double kBinarizeThreshold = 0.5;

/// Strict threshold: a pixel is foreground iff probability > threshold.
template <typename T>
std::vector<Mask2D> binarize(const Tensor<T>& probabilities, double threshold = kBinarizeThreshold) {
  if (probabilities.rank() != 4 || probabilities.dim(1) != 1)
    throw ValidationError("binarize: expected [N,1,H,W]");
  const std::size_t n = probabilities.dim(0), h = probabilities.dim(2), w = probabilities.dim(3);
  std::vector<Mask2D> out;
  for (std::size_t s = 0; s < n; ++s) {
    Mask2D m(h, w, 0);
    for (std::size_t i = 0; i < h * w; ++i)
      m.values[i] = static_cast<double>(probabilities[s * h * w + i]) > threshold ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace wcseg
