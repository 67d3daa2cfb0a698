#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tkvseg/volume.hpp"

namespace tkvseg {

inline constexpr double kTargetSpacingMm = 1.5;

enum class Interp { trilinear, nearest };

// Samples `v` on a new grid. Positions outside the source clamp to the nearest edge voxel.
template <typename V>
Volume<V> resample(const Volume<V>& v, const Index3& out_dims, const Vec3& out_spacing,
                   const Vec3& out_origin, Interp interp);

// Isotropic grid at `target_spacing` mm, dims = max(1, round(dims * spacing / target)),
// centred on the source extent.
template <typename V>
Volume<V> resample_isotropic(const Volume<V>& v, double target_spacing, Interp interp);

// Image trilinear, mask nearest.
Sample resample_sample(const Sample& s, double target_spacing);

// Clamp to [lo, hi] and map affinely onto [0, 1].
ImageVolume normalize_intensity(const ImageVolume& image, double lo = -200.0, double hi = 500.0);

// A box in source voxel coordinates; starts may be negative or run past the end (padding).
struct CropWindow {
  std::array<std::ptrdiff_t, 3> start{0, 0, 0};
  Index3 size{1, 1, 1};
};

// Window starts covering [0, extent) with the given overlap in voxels.
std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t window, std::size_t overlap);

// Copies `window` out of `v`, filling voxels outside the source with `pad`. The result keeps
// the source spacing; its origin is shifted to the window.
template <typename V>
Volume<V> extract_window(const Volume<V>& v, const CropWindow& window, V pad);

struct CropPolicy {
  Index3 target{144, 250, 250};
  double z_overlap = 0.0;  // fraction of target z shared by neighbouring crops
  float image_pad = 0.0f;  // fill for image voxels outside the source
};

struct Crop {
  Sample sample;
  CropWindow window;
};

// Tiles along z and centre-crops or pads y and x to the target size. Images pad with
// policy.image_pad, masks with background.
std::vector<Crop> crop_z(const Sample& s, const CropPolicy& policy);

struct AugmentRanges {
  double max_rotation_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;

  void validate() const;
};

struct AugmentParams {
  double rotation_deg = 0.0;  // about the z axis
  double scale = 1.0;         // isotropic
};

AugmentParams draw_augment_params(std::uint64_t seed, const AugmentRanges& ranges);

// Rotation and scaling about the volume centre: trilinear for the image, nearest for the mask.
Sample augment(const Sample& s, const AugmentParams& params);
Sample augment(const Sample& s, std::uint64_t seed, const AugmentRanges& ranges = {});

}  // namespace tkvseg
