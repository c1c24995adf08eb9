#pragma once

// Checkpoint layout, all little-endian:
//   "WCSM1" | u8 version (1)
//   u32 depth | u32 base_channels | u8 attention | f64 dropout_p | f64 noise_level | u32 input_size
//   f32 values of every trainable tensor in registry order, then the batch-norm
//   running mean / running variance buffers in registry order.

#include <string>

#include "wcseg/detail/byteio.hpp"
#include "wcseg/nn/unet.hpp"

namespace wcseg {

inline constexpr char kCheckpointMagic[] = "WCSM1";
inline constexpr std::uint8_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(Model<T>& model) {
  std::string out(kCheckpointMagic, 5);
  out.push_back(static_cast<char>(kCheckpointVersion));
  const auto& c = model.config;
  detail::put_u32(out, static_cast<std::uint32_t>(c.depth));
  detail::put_u32(out, static_cast<std::uint32_t>(c.base_channels));
  out.push_back(static_cast<char>(c.attention ? 1 : 0));
  detail::put_f64(out, c.dropout_p);
  detail::put_f64(out, c.noise_level);
  detail::put_u32(out, static_cast<std::uint32_t>(c.input_size));
  for (const auto& p : model.parameters())
    for (T v : p.data()) detail::put_f32(out, static_cast<float>(v));
  for (const auto* buf : model.buffers())
    for (T v : *buf) detail::put_f32(out, static_cast<float>(v));
  return out;
}

template <typename T = float>
Model<T> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.take(5) != std::string(kCheckpointMagic, 5)) throw FormatError("checkpoint: bad magic");
  if (const auto v = r.u8(); v != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  ModelConfig c;
  c.depth = static_cast<int>(r.u32());
  c.base_channels = static_cast<int>(r.u32());
  c.attention = r.u8() != 0;
  c.dropout_p = r.f64();
  c.noise_level = r.f64();
  c.input_size = static_cast<int>(r.u32());
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  std::mt19937_64 unused(0);
  Model<T> m = build_model<T>(c, unused);
  std::size_t expected = parameter_count(m);
  for (const auto* buf : m.buffers()) expected += buf->size();
  if (r.remaining() != expected * 4)
    throw FormatError("checkpoint: payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(expected * 4));
  for (auto p : m.parameters())
    for (T& v : p.data()) v = static_cast<T>(r.f32());
  for (auto* buf : m.buffers())
    for (T& v : *buf) v = static_cast<T>(r.f32());
  return m;
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path) {
  detail::write_file(path, encode_checkpoint(model));
}

template <typename T = float>
Model<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(detail::read_file(path));
}

}  // namespace wcseg
