#include "semaug/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "semaug/errors.hpp"

namespace semaug {

void Tensor3::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor3& Tensor3::operator+=(const Tensor3& o) {
  if (!same_shape(o)) throw InvalidInput("Tensor3 += : shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

bool all_finite(std::span<const Real> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](Real x) { return std::isfinite(x); });
}

}  // namespace semaug
