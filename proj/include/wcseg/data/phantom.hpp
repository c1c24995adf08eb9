#pragma once

// Synthetic wrist-like phantoms. Geometry lives in millimetres so the same seed yields the same anatomy
// at any voxel size. Two carpal-like ellipsoids face each other across a joint gap; the labelled
// cartilage is a thin cap on each articular surface. Skin ring and vessels are bright but unlabelled.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "wcseg/data/volume.hpp"

namespace wcseg {

struct PhantomConfig {
  double snr = 4.0;  // cartilage intensity / noise sigma; <= 0 disables noise
  double cartilage_intensity = 1.0;
  double tissue_intensity = 0.3;
  double bone_intensity = 0.5;
  double air_intensity = 0.05;
  bool confounders = true;   // skin ring + vessels
  bool bone_interior = true;  // bones distinct from soft tissue; otherwise tissue intensity
  double thickness_min_mm = 0.6;
  double thickness_max_mm = 1.0;
  double mask_fraction_min = 0.005;
  double mask_fraction_max = 0.02;
  double confounder_contrast = 0.08;  // confounder intensity stays within this relative band of cartilage
  std::uint64_t noise_salt = 0;       // varies noise only, anatomy unchanged (repeat scans)
  std::size_t max_attempts = 200;

  void validate() const {
    if (!(thickness_min_mm > 0) || thickness_max_mm < thickness_min_mm)
      throw ValidationError("phantom: bad thickness range");
    if (!(mask_fraction_min >= 0) || mask_fraction_max <= mask_fraction_min || mask_fraction_max > 1)
      throw ValidationError("phantom: bad mask fraction band");
    if (confounder_contrast < 0 || confounder_contrast > 0.1)
      throw ValidationError("phantom: confounder contrast must lie in [0, 0.1]");
    if (max_attempts == 0) throw ValidationError("phantom: max_attempts must be positive");
  }
};

struct Phantom {
  Volume image;
  MaskVolume mask;
  ScanMeta meta;
};

inline std::string phantom_subject_id(std::uint64_t seed) { return "phantom-" + std::to_string(seed); }

namespace detail {

struct Ellipsoid {
  std::array<double, 3> c;     // centre (z, y, x) mm
  std::array<double, 3> r;     // semi-axes along (z, u, v), mm
  std::array<double, 2> axis;  // in-plane unit vector u as (y, x); v is its perpendicular

  // Local coordinates scaled by the semi-axes; |q| = 1 on the surface.
  std::array<double, 3> local(double z, double y, double x) const {
    const double dy = y - c[1], dx = x - c[2];
    return {(z - c[0]) / r[0], (axis[0] * dy + axis[1] * dx) / r[1], (-axis[1] * dy + axis[0] * dx) / r[2]};
  }
};

struct Tube {
  double y0, x0, y1, x1;  // centre at z = 0 and z = extent, mm
  double radius;
  double intensity;
};

struct PhantomGeometry {
  Ellipsoid bones[2];
  std::array<double, 2> axis;  // in-plane unit vector from bone 0 to bone 1 (y, x)
  double thickness;
  double cos_cap;
  double ring_ry, ring_rx, ring_thickness, ring_intensity;
  std::vector<Tube> tubes;
};

template <typename Rng>
PhantomGeometry sample_geometry(const std::array<double, 3>& extent, const PhantomConfig& cfg, Rng& rng) {
  auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  PhantomGeometry g{};
  const double ez = extent[0], ey = extent[1], ex = extent[2], span = std::min(ey, ex);
  const double theta = U(0, std::numbers::pi);
  g.axis = {std::sin(theta), std::cos(theta)};
  g.thickness = U(cfg.thickness_min_mm, cfg.thickness_max_mm);
  g.cos_cap = std::cos(U(45, 75) * std::numbers::pi / 180);
  const double gap = U(2.2, 3.5) * g.thickness;
  const double cz = ez * U(0.42, 0.58), cy = ey * U(0.45, 0.55), cx = ex * U(0.45, 0.55);
  for (auto& e : g.bones) {
    e.axis = g.axis;
    e.r = {ez * U(0.3, 0.5), span * U(0.1, 0.16), span * U(0.1, 0.16)};
  }
  // Bone 0 on the -axis side, bone 1 on the +axis side; surfaces `gap` apart along the axis.
  const double zc = cz + U(-0.05, 0.05) * ez;
  for (int b = 0; b < 2; ++b) {
    const double off = (b == 0 ? -1.0 : 1.0) * (g.bones[b].r[1] + 0.5 * gap);
    g.bones[b].c = {zc, cy + off * g.axis[0], cx + off * g.axis[1]};
  }
  g.ring_ry = 0.5 * ey * U(0.86, 0.94);
  g.ring_rx = 0.5 * ex * U(0.86, 0.94);
  g.ring_thickness = U(0.7, 1.1);
  const double c = cfg.cartilage_intensity, k = cfg.confounder_contrast;
  g.ring_intensity = c * U(1 - k, 1 + k);
  if (cfg.confounders) {
    const int n = std::uniform_int_distribution<int>(4, 8)(rng);
    for (int attempt = 0; attempt < 400 && static_cast<int>(g.tubes.size()) < n; ++attempt) {
      Tube t{};
      const double a = U(0, 2 * std::numbers::pi), rho = U(0.25, 0.8);
      t.y0 = ey / 2 + rho * g.ring_ry * std::sin(a);
      t.x0 = ex / 2 + rho * g.ring_rx * std::cos(a);
      t.y1 = t.y0 + U(-1, 1);
      t.x1 = t.x0 + U(-1, 1);
      t.radius = U(0.35, 0.6);
      t.intensity = c * U(1 - k, 1 + k);
      // keep vessels clear of the bones and their cartilage
      bool clear = true;
      for (const auto& e : g.bones) {
        const double f = e.c[0] / ez;
        const double ty = t.y0 + f * (t.y1 - t.y0), tx = t.x0 + f * (t.x1 - t.x0);
        const double reach = std::max(e.r[1], e.r[2]) + g.thickness + 1.5 + t.radius;
        if (std::hypot(ty - e.c[1], tx - e.c[2]) < reach) clear = false;
      }
      if (clear) g.tubes.push_back(t);
    }
  }
  return g;
}

}  // namespace detail

inline constexpr std::size_t kPhantomMinDim = 16;

inline void validate_phantom_dims(const std::array<std::size_t, 3>& dims) {
  for (auto d : dims)
    if (d < kPhantomMinDim)
      throw ValidationError("phantom: every dimension must be >= " + std::to_string(kPhantomMinDim) + " voxels");
}

/// Pure function of (seed, dims, voxel size, config).
inline Phantom generate_phantom(std::uint64_t seed, std::array<std::size_t, 3> dims,
                                std::array<double, 3> voxel_size_mm = {0.5, 0.37, 0.37},
                                const PhantomConfig& cfg = {}) {
  cfg.validate();
  validate_phantom_dims(dims);
  for (auto v : voxel_size_mm)
    if (!(v > 0)) throw ValidationError("phantom: voxel sizes must be positive");
  const std::array<double, 3> extent{dims[0] * voxel_size_mm[0], dims[1] * voxel_size_mm[1],
                                     dims[2] * voxel_size_mm[2]};
  std::mt19937_64 rng(seed);
  const double total = static_cast<double>(dims[0] * dims[1] * dims[2]);

  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const auto g = detail::sample_geometry(extent, cfg, rng);
    Phantom ph{Volume(dims, voxel_size_mm), MaskVolume(dims, voxel_size_mm), ScanMeta{}};
    std::size_t labelled = 0;
    for (std::size_t z = 0; z < dims[0]; ++z) {
      const double pz = (z + 0.5) * voxel_size_mm[0];
      for (std::size_t y = 0; y < dims[1]; ++y) {
        const double py = (y + 0.5) * voxel_size_mm[1];
        for (std::size_t x = 0; x < dims[2]; ++x) {
          const double px = (x + 0.5) * voxel_size_mm[2];
          const double ry = (py - extent[1] / 2) / g.ring_ry, rx = (px - extent[2] / 2) / g.ring_rx;
          const double rho = std::hypot(ry, rx);
          // Radial distance to the limb outline (mm, positive outside).
          const double rim = (rho - 1) * std::hypot(py - extent[1] / 2, px - extent[2] / 2) / std::max(rho, 1e-9);
          double v = rim > 0 ? cfg.air_intensity : cfg.tissue_intensity;
          if (cfg.confounders && rim <= 0 && rim > -g.ring_thickness) v = g.ring_intensity;
          if (cfg.confounders)
            for (const auto& t : g.tubes) {
              const double f = pz / extent[0];
              if (std::hypot(py - (t.y0 + f * (t.y1 - t.y0)), px - (t.x0 + f * (t.x1 - t.x0))) <= t.radius)
                v = t.intensity;
            }
          bool cart = false;
          for (int b = 0; b < 2; ++b) {
            const auto& e = g.bones[b];
            const auto q = e.local(pz, py, px);
            const double f = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
            if (f <= 1) {
              v = cfg.bone_interior ? cfg.bone_intensity : cfg.tissue_intensity;
              continue;
            }
            const double dz = pz - e.c[0], dy = py - e.c[1], dx = px - e.c[2];
            const double dist = std::sqrt(dz * dz + dy * dy + dx * dx);
            const double depth = dist * (f - 1) / f;  // radial distance outside the surface
            const double sign = b == 0 ? 1.0 : -1.0;   // caps face the other bone
            const double cosang = sign * (dy * g.axis[0] + dx * g.axis[1]) / std::max(dist, 1e-9);
            if (depth <= g.thickness && cosang >= g.cos_cap) cart = true;
          }
          if (cart) v = cfg.cartilage_intensity;
          ph.image.at(z, y, x) = static_cast<float>(v);
          ph.mask.at(z, y, x) = cart ? 1 : 0;
          labelled += cart;
        }
      }
    }
    const double fraction = static_cast<double>(labelled) / total;
    if (fraction < cfg.mask_fraction_min || fraction > cfg.mask_fraction_max) continue;

    if (cfg.snr > 0) {
      std::mt19937_64 noise_rng(seed ^ (0x9E3779B97F4A7C15ull * (cfg.noise_salt + 1)));
      std::normal_distribution<double> n(0.0, cfg.cartilage_intensity / cfg.snr);
      for (auto& v : ph.image.values) v = static_cast<float>(v + n(noise_rng));
    }
    ph.meta.subject_id = phantom_subject_id(seed);
    return ph;
  }
  throw ValidationError("phantom: dims too small to place structures within the mask-fraction band");
}

}  // namespace wcseg
