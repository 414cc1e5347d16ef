#include "gazefl/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace gazefl {

NonFiniteError::NonFiniteError(std::string where, std::size_t index)
    : std::runtime_error("non-finite value in " + where + " at element " +
                         std::to_string(index)),
      where_(std::move(where)),
      index_(index) {}

std::string shape_string(std::span<const std::size_t> shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, T fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " holds " +
                     std::to_string(shape_product(shape_)) +
                     " elements but data has " + std::to_string(data_.size()));
  }
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return gazefl::all_finite<T>(data_);
}

template <typename T>
void Tensor<T>::require_finite(std::string_view what) const {
  const std::size_t i = first_non_finite<T>(data_);
  if (i != data_.size()) throw NonFiniteError(std::string(what), i);
}

template <typename T>
std::size_t first_non_finite(std::span<const T> values) noexcept {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) return i;
  }
  return values.size();
}

template <typename T>
bool all_finite(std::span<const T> values) noexcept {
  return first_non_finite(values) == values.size();
}

template class Tensor<float>;
template class Tensor<double>;
template std::size_t first_non_finite<float>(std::span<const float>) noexcept;
template std::size_t first_non_finite<double>(std::span<const double>) noexcept;
template bool all_finite<float>(std::span<const float>) noexcept;
template bool all_finite<double>(std::span<const double>) noexcept;

}  // namespace gazefl
