#include "tkvseg/volume.hpp"

namespace tkvseg {

std::string to_string(const Index3& v) {
  return "(" + std::to_string(v[0]) + ", " + std::to_string(v[1]) + ", " + std::to_string(v[2]) +
         ")";
}

void Sample::validate() const {
  image.validate();
  mask.validate();
  if (!image.same_grid(mask)) {
    throw ShapeError("sample '" + case_id + "': image and mask grids differ");
  }
}

void validate_labels(const LabelVolume& mask, std::size_t num_classes) {
  for (std::uint8_t v : mask.data) {
    if (v >= num_classes) {
      throw ValidationError("label " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace tkvseg
