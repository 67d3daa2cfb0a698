#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tkvseg/volume.hpp"

namespace tkvseg {

struct Range {
  double lo = 0;
  double hi = 0;
};

// Ellipsoid with an optional smooth radial perturbation ("lumps"). Coordinates are
// millimetres from the grid origin, ordered (z, y, x).
struct Ellipsoid {
  Vec3 center{};
  Vec3 radii{};
  double lump_amplitude = 0;
  std::array<Vec3, 3> lump_dirs{};
  std::array<double, 3> lump_phase{};

  bool contains(const Vec3& p) const;
  double analytic_volume() const;  // exact for lump_amplitude == 0
};

// Generator parameters. Lengths are in millimetres; centres are fractions of the grid
// extent on each axis.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Index3 dims{32, 32, 32};
  Vec3 spacing{1.5, 1.5, 1.5};

  Vec3 left_kidney_center{0.50, 0.55, 0.27};
  Vec3 right_kidney_center{0.45, 0.55, 0.73};
  double center_jitter = 0.03;  // fraction of extent

  Range kidney_radius_z{8.5, 11.0};
  Range kidney_radius_y{6.0, 8.0};
  Range kidney_radius_x{5.5, 7.0};
  double lumpiness = 0.08;
  std::size_t cysts_per_kidney = 3;

  Range liver_radius_z{11.0, 13.0};
  Range liver_radius_y{9.0, 11.0};
  Range liver_radius_x{9.0, 11.0};
  double contact_probability = 0.5;

  // Hounsfield-like intensities.
  double background_hu = -100;
  double liver_hu = 60;
  double left_kidney_hu = 200;
  double right_kidney_hu = 320;
  double cyst_offset_hu = -70;
  double noise_sigma_hu = 8;

  // Defaults scaled to a grid; radii keep their proportion of the extent.
  static PhantomSpec for_grid(const Index3& dims, double spacing, std::uint64_t seed);

  Vec3 extent() const {
    return {dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]};
  }
  void validate() const;
};

struct PhantomCase {
  Sample sample;
  Ellipsoid left_kidney;
  Ellipsoid right_kidney;
  Ellipsoid liver;
  bool liver_contacts_kidney = false;

  // Sum of the two kidney ellipsoid volumes (exact when lumpiness is 0).
  double analytic_tkv_mm3() const {
    return left_kidney.analytic_volume() + right_kidney.analytic_volume();
  }
};

// Kidney task labels: 0 background, 1 left kidney, 2 right kidney (liver is background).
// Liver task labels:  0 background, 1 liver (kidneys are background).
struct PhantomPair {
  PhantomCase kidney;
  PhantomCase liver;
};

// One synthetic abdomen with labels for `task` ("kidney" or "liver").
PhantomCase generate_phantom_case(const PhantomSpec& spec, const std::string& task,
                                  const std::string& case_id);

// Two distinct synthetic cases derived from spec.seed, one per task.
PhantomPair generate_phantom_pair(const PhantomSpec& spec, const std::string& case_id);

}  // namespace tkvseg
