#pragma once

#include <algorithm>
#include <cmath>

#include "lfb/errors.hpp"

namespace lfb {

/// Axis-aligned box in continuous coordinates, corners (x1, y1) to (x2, y2).
/// A box with x2 <= x1 or y2 <= y1 has zero area.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return std::max(0.0, x2 - x1); }
  double height() const { return std::max(0.0, y2 - y1); }
  double area() const { return width() * height(); }

  bool operator==(const Box& o) const {
    return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
  }
};

/// Clamps all corners into [0, width] x [0, height].
inline Box clip_box(const Box& b, double width, double height) {
  return Box{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
             std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
}

/// Intersection over union. Zero-area union (two degenerate boxes) is
/// defined as overlap 0.
inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(
      0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(
      0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace lfb
