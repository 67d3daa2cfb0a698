#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tkvseg/errors.hpp"

namespace tkvseg {

using Index3 = std::array<std::size_t, 3>;  // (z, y, x)
using Vec3 = std::array<double, 3>;         // (z, y, x), millimetres

std::string to_string(const Index3& v);

// A 3-D scalar grid with physical geometry. Intensity images and label masks share it.
template <typename V>
struct Volume {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<V> data = std::vector<V>(1, V{});

  Volume() = default;
  Volume(Index3 dims_, Vec3 spacing_, Vec3 origin_ = {0.0, 0.0, 0.0}, V fill = V{})
      : dims(dims_), spacing(spacing_), origin(origin_), data(dims_[0] * dims_[1] * dims_[2], fill) {
    validate();
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * dims[1] + y) * dims[2] + x;
  }
  V& at(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
  const V& at(std::size_t z, std::size_t y, std::size_t x) const { return data[index(z, y, x)]; }

  double voxel_volume() const noexcept { return spacing[0] * spacing[1] * spacing[2]; }

  bool same_grid(const Volume<V>& other) const noexcept {
    return dims == other.dims && spacing == other.spacing && origin == other.origin;
  }
  template <typename U>
  bool same_grid(const Volume<U>& other) const noexcept {
    return dims == other.dims && spacing == other.spacing && origin == other.origin;
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] == 0) throw ShapeError("volume extent must be positive");
      if (!(spacing[a] > 0)) throw ShapeError("volume spacing must be positive");
    }
    if (data.size() != dims[0] * dims[1] * dims[2]) {
      throw ShapeError("volume buffer holds " + std::to_string(data.size()) +
                       " voxels, dims " + to_string(dims) + " need " +
                       std::to_string(dims[0] * dims[1] * dims[2]));
    }
  }

  bool operator==(const Volume&) const = default;
};

using ImageVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

// An aligned image/mask pair belonging to one task.
struct Sample {
  ImageVolume image;
  LabelVolume mask;
  std::string task;
  std::string case_id;

  void validate() const;
};

// Throws ValidationError if any label is >= num_classes.
void validate_labels(const LabelVolume& mask, std::size_t num_classes);

}  // namespace tkvseg
