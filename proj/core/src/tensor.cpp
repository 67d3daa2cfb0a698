#include "tkvseg/tensor.hpp"

#include <sstream>

namespace tkvseg {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeError("tensor rank must be in [1, 5], got shape " + shape_to_string(shape));
  }
  std::size_t n = 1;
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("zero extent in shape " + shape_to_string(shape));
    n *= extent;
  }
  return n;
}

void require_rank5(const Shape& shape, const char* what) {
  if (shape.size() != 5) {
    throw ShapeError(std::string(what) + ": expected a rank-5 (B,C,Z,Y,X) tensor, got " +
                     shape_to_string(shape));
  }
}

}  // namespace tkvseg
