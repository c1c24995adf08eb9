#pragma once

#include <array>
#include <utility>

#include "wcseg/data/volume.hpp"

namespace wcseg {

/// Integer downsampling factors per axis (z, y, x).
using Factors3 = std::array<std::size_t, 3>;

/// Block mean for the image, majority vote for the mask (half or more set -> 1); voxel sizes scale by
/// the factors so physical extent is preserved.
inline std::pair<Volume, MaskVolume> degrade_resolution(const Volume& image, const MaskVolume& mask,
                                                        Factors3 factors) {
  image.validate();
  mask.validate();
  if (image.dims != mask.dims) throw ValidationError("degrade_resolution: mask dims differ from image dims");
  std::array<std::size_t, 3> out_dims{};
  std::array<double, 3> out_vs{};
  for (int a = 0; a < 3; ++a) {
    if (factors[a] < 1) throw ValidationError("degrade_resolution: factors must be >= 1");
    if (image.dims[a] % factors[a] != 0)
      throw ValidationError("degrade_resolution: dim " + std::to_string(image.dims[a]) + " not divisible by " +
                            std::to_string(factors[a]));
    out_dims[a] = image.dims[a] / factors[a];
    out_vs[a] = image.voxel_size_mm[a] * static_cast<double>(factors[a]);
  }
  Volume out_img(out_dims, out_vs);
  MaskVolume out_mask(out_dims, out_vs);
  const std::size_t block = factors[0] * factors[1] * factors[2];
  for (std::size_t z = 0; z < out_dims[0]; ++z)
    for (std::size_t y = 0; y < out_dims[1]; ++y)
      for (std::size_t x = 0; x < out_dims[2]; ++x) {
        double sum = 0;
        std::size_t ones = 0;
        for (std::size_t i = 0; i < factors[0]; ++i)
          for (std::size_t j = 0; j < factors[1]; ++j)
            for (std::size_t k = 0; k < factors[2]; ++k) {
              const std::size_t sz = z * factors[0] + i, sy = y * factors[1] + j, sx = x * factors[2] + k;
              sum += image.at(sz, sy, sx);
              ones += mask.at(sz, sy, sx) != 0;
            }
        out_img.at(z, y, x) = static_cast<float>(sum / static_cast<double>(block));
        out_mask.at(z, y, x) = 2 * ones >= block ? 1 : 0;
      }
  return {std::move(out_img), std::move(out_mask)};
}

/// In-plane degradation: slice spacing is kept, rows and columns are coarsened by `factor`.
inline std::pair<Volume, MaskVolume> degrade_resolution(const Volume& image, const MaskVolume& mask,
                                                        std::size_t factor) {
  return degrade_resolution(image, mask, Factors3{1, factor, factor});
}

}  // namespace wcseg
