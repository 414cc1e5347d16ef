#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gazefl {

// Thrown when operand shapes disagree. The message names every shape involved.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a NaN or Inf is found where finite values are required.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string where, std::size_t index);

  const std::string& where() const noexcept { return where_; }
  std::size_t index() const noexcept { return index_; }

 private:
  std::string where_;
  std::size_t index_;
};

std::string shape_string(std::span<const std::size_t> shape);

// Dense row-major tensor. product(shape) == size() always holds.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T{0});
  Tensor(std::vector<std::size_t> shape, std::vector<T> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 accessor (channel, row, column).
  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool all_finite() const noexcept;
  // Throws NonFiniteError naming `what` at the first non-finite element.
  void require_finite(std::string_view what) const;

  std::string shape_str() const { return shape_string(shape_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

template <typename T>
bool all_finite(std::span<const T> values) noexcept;

// Index of the first non-finite element, or values.size() when all are finite.
template <typename T>
std::size_t first_non_finite(std::span<const T> values) noexcept;

}  // namespace gazefl
