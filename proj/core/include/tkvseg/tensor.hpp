#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tkvseg/errors.hpp"

namespace tkvseg {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "only float and double tensors carry a DType");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

std::string shape_to_string(const Shape& shape);

// Validates rank and extents and returns the element count.
std::size_t checked_numel(const Shape& shape);

// Dense row-major array. Activations use the (batch, channel, z, y, x) layout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{}) {}

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
      throw ShapeError("tensor of shape " + shape_to_string(shape_) + " cannot hold " +
                       std::to_string(data_.size()) + " elements");
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  template <typename Rng>
  static Tensor uniform(Shape shape, T lo, T hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data_) v = static_cast<T>(dist(rng));
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 5-D element access; no bounds checks beyond debug assertions in std::vector.
  T& at(std::size_t b, std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return data_[offset(b, c, z, y, x)];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return data_[offset(b, c, z, y, x)];
  }

  T item() const {
    if (data_.size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::size_t b, std::size_t c, std::size_t z, std::size_t y,
                     std::size_t x) const {
    return (((b * shape_[1] + c) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x;
  }

  Shape shape_;
  std::vector<T> data_;
};

// Throws ShapeError unless `t` is rank 5.
void require_rank5(const Shape& shape, const char* what);

}  // namespace tkvseg
