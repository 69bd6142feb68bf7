#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace semaug {

using Real = double;

/// Dense H x W x C tensor stored row-major with channels innermost.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t height, std::size_t width, std::size_t channels, Real fill = 0.0)
      : h_(height), w_(width), c_(channels), data_(height * width * channels, fill) {}

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t channels() const noexcept { return c_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t y, std::size_t x, std::size_t ch) noexcept {
    return data_[(y * w_ + x) * c_ + ch];
  }
  Real operator()(std::size_t y, std::size_t x, std::size_t ch) const noexcept {
    return data_[(y * w_ + x) * c_ + ch];
  }

  std::span<Real> pixel(std::size_t y, std::size_t x) noexcept {
    return {data_.data() + (y * w_ + x) * c_, c_};
  }
  std::span<const Real> pixel(std::size_t y, std::size_t x) const noexcept {
    return {data_.data() + (y * w_ + x) * c_, c_};
  }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }

  bool same_shape(const Tensor3& o) const noexcept {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

  void fill(Real v);
  Tensor3& operator+=(const Tensor3& o);

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::size_t c_ = 0;
  std::vector<Real> data_;
};

/// H x W x C image/feature aliases. Images carry 3 channels in [0, 1].
using Image = Tensor3;
using FeatureMap = Tensor3;

/// A point in the joint image-text embedding space.
using Embedding = std::vector<Real>;

bool all_finite(std::span<const Real> v) noexcept;

}  // namespace semaug
