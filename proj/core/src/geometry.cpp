#include "semaug/geometry.hpp"

#include <algorithm>

namespace semaug {

Real iou(const Box& a, const Box& b) noexcept {
  const Real iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const Real ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0;
  const Real inter = iw * ih;
  const Real uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0;
}

Box clip_box(const Box& b, Real width, Real height) noexcept {
  return {std::clamp(b.x_min, Real{0}, width), std::clamp(b.y_min, Real{0}, height),
          std::clamp(b.x_max, Real{0}, width), std::clamp(b.y_max, Real{0}, height)};
}

Box flip_horizontal(const Box& b, Real width) noexcept {
  return {width - b.x_max, b.y_min, width - b.x_min, b.y_max};
}

}  // namespace semaug
