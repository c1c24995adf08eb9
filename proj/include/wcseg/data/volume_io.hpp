#pragma once

// Volume file: "WCSV1\n" | u32 LE header length | UTF-8 JSON header | payload.
// Header: {"dims":[D,H,W],"voxel_size_mm":[dz,dy,dx],"dtype":"f32"|"u8","kind":"image"|"mask"}
// Payload in C order: little-endian f32 for images, one byte per voxel for masks.

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "wcseg/data/volume.hpp"
#include "wcseg/detail/byteio.hpp"

namespace wcseg {

inline constexpr char kVolumeMagic[] = "WCSV1\n";

namespace detail {

template <typename V>
std::string encode_grid(const Grid3<V>& g, const char* dtype, const char* kind) {
  g.validate();
  nlohmann::ordered_json header;
  header["dims"] = g.dims;
  header["voxel_size_mm"] = g.voxel_size_mm;
  header["dtype"] = dtype;
  header["kind"] = kind;
  const std::string text = header.dump();
  std::string out(kVolumeMagic, 6);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  return out;
}

}  // namespace detail

inline std::string encode_volume(const Volume& v) {
  std::string out = detail::encode_grid(v, "f32", "image");
  out.reserve(out.size() + v.size() * 4);
  for (float x : v.values) detail::put_f32(out, x);
  return out;
}

inline std::string encode_volume(const MaskVolume& m) {
  require_binary(m);
  std::string out = detail::encode_grid(m, "u8", "mask");
  out.append(reinterpret_cast<const char*>(m.values.data()), m.values.size());
  return out;
}

using AnyVolume = std::variant<Volume, MaskVolume>;

inline AnyVolume decode_volume(const std::string& bytes) {
  detail::ByteReader r(bytes, "volume");
  if (r.take(6) != std::string(kVolumeMagic, 6)) throw FormatError("volume: bad magic");
  const std::uint32_t header_len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("volume: malformed header: ") + e.what());
  }
  std::array<std::size_t, 3> dims{};
  std::array<double, 3> vs{};
  std::string dtype, kind;
  try {
    dims = header.at("dims").get<std::array<std::size_t, 3>>();
    vs = header.at("voxel_size_mm").get<std::array<double, 3>>();
    dtype = header.at("dtype").get<std::string>();
    kind = header.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("volume: incomplete header: ") + e.what());
  }
  const std::size_t count = dims[0] * dims[1] * dims[2];
  if (count == 0) throw FormatError("volume: dims must be positive");
  for (double v : vs)
    if (!(v > 0)) throw FormatError("volume: voxel sizes must be positive");
  const std::size_t elem = dtype == "f32" ? 4 : dtype == "u8" ? 1 : 0;
  if (elem == 0) throw FormatError("volume: unknown dtype '" + dtype + "'");
  if ((kind == "image") != (dtype == "f32") || (kind != "image" && kind != "mask"))
    throw FormatError("volume: kind '" + kind + "' incompatible with dtype '" + dtype + "'");
  if (r.remaining() != count * elem)
    throw FormatError("volume: payload length " + std::to_string(r.remaining()) + " does not match dims (" +
                      std::to_string(count * elem) + " bytes expected)");
  if (kind == "image") {
    Volume v(dims, vs);
    for (auto& x : v.values) x = r.f32();
    return v;
  }
  MaskVolume m(dims, vs);
  const std::string payload = r.take(count);
  std::copy(payload.begin(), payload.end(), reinterpret_cast<char*>(m.values.data()));
  require_binary(m);
  return m;
}

inline AnyVolume load_any_volume(const std::string& path) { return decode_volume(detail::read_file(path)); }

inline Volume load_volume(const std::string& path) {
  auto any = load_any_volume(path);
  if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
  throw FormatError("'" + path + "' holds a mask, expected an image");
}

inline MaskVolume load_mask(const std::string& path) {
  auto any = load_any_volume(path);
  if (auto* m = std::get_if<MaskVolume>(&any)) return std::move(*m);
  throw FormatError("'" + path + "' holds an image, expected a mask");
}

inline void save_volume(const Volume& v, const std::string& path) { detail::write_file(path, encode_volume(v)); }
inline void save_volume(const MaskVolume& m, const std::string& path) {
  detail::write_file(path, encode_volume(m));
}

// ---- dataset manifest ----

struct ManifestEntry {
  std::string image_path;  // may be empty in prediction manifests
  std::string mask_path;
  ScanMeta meta;
};

inline nlohmann::ordered_json manifest_to_json(const std::vector<ManifestEntry>& entries) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["image_path"] = e.image_path;
    j["mask_path"] = e.mask_path;
    j["subject_id"] = e.meta.subject_id;
    j["hand"] = e.meta.hand;
    j["coil"] = e.meta.coil;
    j["field_T"] = e.meta.field_T;
    j["session"] = e.meta.session;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  detail::write_file(path, manifest_to_json(entries).dump(2) + "\n");
}

/// Relative paths are resolved against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  if (!j.is_array()) throw FormatError("manifest '" + path + "': expected a JSON list");
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
  };
  std::vector<ManifestEntry> out;
  for (const auto& item : j) {
    ManifestEntry e;
    try {
      e.image_path = resolve(item.value("image_path", std::string()));
      e.mask_path = resolve(item.at("mask_path").get<std::string>());
      e.meta.subject_id = item.at("subject_id").get<std::string>();
      e.meta.hand = item.value("hand", std::string("right"));
      e.meta.coil = item.value("coil", std::string("A"));
      e.meta.field_T = item.value("field_T", 1.5);
      e.meta.session = item.value("session", std::string("s1"));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("manifest '" + path + "': " + ex.what());
    }
    if (e.meta.subject_id.empty()) throw FormatError("manifest '" + path + "': empty subject_id");
    out.push_back(std::move(e));
  }
  return out;
}

inline Dataset load_dataset(const std::vector<ManifestEntry>& manifest) {
  std::vector<DatasetEntry> entries;
  for (const auto& m : manifest) {
    DatasetEntry e{load_volume(m.image_path), load_mask(m.mask_path), m.meta};
    if (e.image.dims != e.mask.dims)
      throw FormatError("mask '" + m.mask_path + "' dims differ from image '" + m.image_path + "'");
    entries.push_back(std::move(e));
  }
  return Dataset(std::move(entries));
}

}  // namespace wcseg
