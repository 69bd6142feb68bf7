#pragma once

#include "semaug/tensor.hpp"

namespace semaug {

/// Axis-aligned box in pixel coordinates, corner form.
struct Box {
  Real x_min = 0;
  Real y_min = 0;
  Real x_max = 0;
  Real y_max = 0;

  Real width() const noexcept { return x_max - x_min; }
  Real height() const noexcept { return y_max - y_min; }
  Real area() const noexcept { return width() > 0 && height() > 0 ? width() * height() : 0; }
  bool valid() const noexcept { return x_max > x_min && y_max > y_min; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union in [0, 1]; 0 when the union is empty.
Real iou(const Box& a, const Box& b) noexcept;

Box clip_box(const Box& b, Real width, Real height) noexcept;

Box flip_horizontal(const Box& b, Real width) noexcept;

}  // namespace semaug
