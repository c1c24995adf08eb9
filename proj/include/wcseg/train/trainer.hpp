#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wcseg/data/augment.hpp"
#include "wcseg/data/preprocess.hpp"
#include "wcseg/eval/metrics.hpp"
#include "wcseg/nn/unet.hpp"
#include "wcseg/train/optim.hpp"

namespace wcseg {

struct TrainConfig {
  LrSchedule lr;
  std::size_t batch_size = 4;
  std::size_t epochs = 10;
  double validation_fraction = 0.1;
  std::size_t augment_copies = 1;  // augmented copies added per training slice
  AugmentConfig augment;
  std::uint64_t seed = 0;
  bool record_timing = true;  // false writes 0 seconds so histories are byte-stable

  void validate() const {
    lr.validate();
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
      throw ValidationError("validation_fraction must lie in [0, 1)");
    augment.validate();
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.lr.learning_rate},
          {"schedule", schedule_name(c.lr.schedule)},
          {"decay_factor", c.lr.decay_factor},
          {"restart_period", c.lr.restart_period},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"validation_fraction", c.validation_fraction},
          {"augment_copies", c.augment_copies},
          {"seed", c.seed},
          {"record_timing", c.record_timing}};
}

/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.lr.learning_rate = value.get<double>();
    else if (key == "schedule") c.lr.schedule = parse_schedule(value.get<std::string>());
    else if (key == "decay_factor") c.lr.decay_factor = value.get<double>();
    else if (key == "restart_period") c.lr.restart_period = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "validation_fraction") c.validation_fraction = value.get<double>();
    else if (key == "augment_copies") c.augment_copies = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "record_timing") c.record_timing = value.get<bool>();
    else throw ValidationError("train config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"variant", c.variant_name()}, {"depth", c.depth},         {"base_channels", c.base_channels},
          {"attention", c.attention},    {"dropout", c.dropout_p},   {"noise_level", c.noise_level},
          {"input_size", c.input_size}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") {
      const auto v = config_for_variant(value.get<std::string>());
      c.depth = v.depth;
      c.attention = v.attention;
    } else if (key == "depth") c.depth = value.get<int>();
    else if (key == "base_channels") c.base_channels = value.get<int>();
    else if (key == "attention") c.attention = value.get<bool>();
    else if (key == "dropout") c.dropout_p = value.get<double>();
    else if (key == "noise_level") c.noise_level = value.get<double>();
    else if (key == "input_size") c.input_size = value.get<int>();
    else throw ValidationError("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

struct EpochRecord {
  std::size_t epoch;
  double loss;
  double val_dsc2d;  // NaN without a validation set
  double lr;
  double seconds;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,loss,val_dsc2d,lr,seconds\n";
    char buf[160], val[40] = "";
    for (const auto& e : epochs) {
      if (std::isnan(e.val_dsc2d))
        val[0] = '\0';
      else
        std::snprintf(val, sizeof val, "%.9g", e.val_dsc2d);
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%s,%.9g,%.3f\n", e.epoch, e.loss, val, e.lr, e.seconds);
      os << buf;
    }
    return os.str();
  }
};

/// Network-ready slices of the given entries: resized, normalized image and nearest-resized mask.
inline std::vector<SlicePair> prepare_samples(const Dataset& ds, const std::vector<std::size_t>& entries,
                                              std::size_t input_size) {
  std::vector<SlicePair> out;
  for (auto i : entries) {
    const auto& e = ds[i];
    for (std::size_t z = 0; z < e.image.dims[0]; ++z)
      out.push_back({prepare_slice(e.image.slice(z), input_size),
                     resize_nearest(e.mask.slice(z), input_size, input_size)});
  }
  return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

template <typename T>
Tensor<T> stack_images(const std::vector<SlicePair>& samples, const std::vector<std::size_t>& idx,
                       std::size_t first, std::size_t count, bool masks) {
  const std::size_t h = samples[idx[first]].first.height, w = samples[idx[first]].first.width;
  std::vector<T> v(count * h * w);
  for (std::size_t b = 0; b < count; ++b) {
    const auto& s = samples[idx[first + b]];
    for (std::size_t p = 0; p < h * w; ++p)
      v[b * h * w + p] = masks ? static_cast<T>(s.second.values[p]) : static_cast<T>(s.first.values[p]);
  }
  return Tensor<T>({count, 1, h, w}, std::move(v));
}

}  // namespace detail

/// Inference probabilities for prepared images, batched.
template <typename T>
std::vector<std::vector<T>> predict_probabilities(Model<T>& model, const std::vector<Image2D>& images,
                                                  std::size_t batch = 8) {
  NoGradGuard guard;
  std::mt19937_64 unused(0);
  std::vector<std::vector<T>> out;
  for (std::size_t first = 0; first < images.size(); first += batch) {
    const std::size_t n = std::min(batch, images.size() - first);
    const std::size_t h = images[first].height, w = images[first].width;
    std::vector<T> v(n * h * w);
    for (std::size_t b = 0; b < n; ++b)
      std::copy(images[first + b].values.begin(), images[first + b].values.end(), v.begin() + b * h * w);
    const auto probs = forward(model, Tensor<T>({n, 1, h, w}, std::move(v)), false, unused);
    for (std::size_t b = 0; b < n; ++b)
      out.emplace_back(probs.data().begin() + b * h * w, probs.data().begin() + (b + 1) * h * w);
  }
  return out;
}

/// Mean 2D DSC of thresholded predictions over prepared samples.
template <typename T>
double mean_dsc2d(Model<T>& model, const std::vector<SlicePair>& samples) {
  std::vector<Image2D> images;
  for (const auto& s : samples) images.push_back(s.first);
  const auto probs = predict_probabilities(model, images);
  double total = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Mask2D m(samples[i].second.height, samples[i].second.width);
    for (std::size_t p = 0; p < m.size(); ++p) m.values[p] = probs[i][p] > T(kBinarizeThreshold);
    total += dsc_2d(m, samples[i].second);
  }
  return samples.empty() ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(samples.size());
}

template <typename T>
struct TrainResult {
  Model<T> model;  // best-validation weights (last epoch without validation)
  TrainHistory history;
};

/// Mini-batch Adam on BCE. `train` and `validation` are prepared samples; augmentation is applied to
/// the training samples once, up front.
template <typename T>
TrainResult<T> train(Model<T> model, std::vector<SlicePair> train_set, const std::vector<SlicePair>& validation,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  const std::size_t size = static_cast<std::size_t>(model.config.input_size);
  for (const auto& s : train_set)
    if (s.first.height != size || s.first.width != size)
      throw ValidationError("train: samples must match the model input size");

  std::mt19937_64 aug_rng(detail::mix_seed(cfg.seed, 1));
  std::mt19937_64 order_rng(detail::mix_seed(cfg.seed, 2));
  std::mt19937_64 noise_rng(detail::mix_seed(cfg.seed, 3));
  if (cfg.augment_copies > 0) {
    const std::size_t originals = train_set.size();
    for (std::size_t i = 0; i < originals; ++i) {
      auto extra = augment(train_set[i].first, train_set[i].second, cfg.augment_copies, aug_rng, cfg.augment);
      for (auto& p : extra) train_set.push_back(std::move(p));
    }
  }
  if (cfg.batch_size > train_set.size()) throw ValidationError("train: batch_size exceeds training-set size");

  auto params = model.parameters();
  AdamState<T> adam;
  TrainHistory hist;
  double best = -1;
  Model<T> best_model = model.clone();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, cfg.lr);
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      const auto x = detail::stack_images<T>(train_set, order, first, n, false);
      const auto y = detail::stack_images<T>(train_set, order, first, n, true);
      const auto loss = bce_loss(forward(model, x, true, noise_rng), y);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(hist.steps));
      for (auto& p : params) p.zero_grad();
      backward(loss);
      if (!adam_step(params, adam, lr)) ++hist.skipped_steps;
      loss_sum += lv;
      ++batches;
      ++hist.steps;
    }
    const double val = validation.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_dsc2d(model, validation);
    if (validation.empty() || val > best) {
      best = validation.empty() ? 0 : val;
      best_model = model.clone();
      hist.best_epoch = epoch;
    }
    const double secs =
        cfg.record_timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    hist.epochs.push_back({epoch, loss_sum / static_cast<double>(batches), val, lr, secs});
  }
  return {cfg.epochs == 0 ? std::move(model) : std::move(best_model), std::move(hist)};
}

/// Slice-wise segmentation of a whole volume; probabilities are resampled to the native in-plane
/// extent before thresholding.
template <typename T>
MaskVolume predict_volume(Model<T>& model, const Volume& image) {
  image.validate();
  const auto size = static_cast<std::size_t>(model.config.input_size);
  std::vector<Image2D> prepared;
  for (std::size_t z = 0; z < image.dims[0]; ++z) prepared.push_back(prepare_slice(image.slice(z), size));
  const auto probs = predict_probabilities(model, prepared);
  MaskVolume out(image.dims, image.voxel_size_mm);
  for (std::size_t z = 0; z < image.dims[0]; ++z) {
    Image2D p(size, size);
    std::transform(probs[z].begin(), probs[z].end(), p.values.begin(), [](T v) { return static_cast<float>(v); });
    const auto native = resize_image(p, image.dims[1], image.dims[2]);
    Mask2D m(image.dims[1], image.dims[2]);
    for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = native.values[i] > kBinarizeThreshold;
    out.set_slice(z, m);
  }
  return out;
}

}  // namespace wcseg
