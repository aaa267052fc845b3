#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "lfb/box.hpp"
#include "lfb/tensor.hpp"

namespace lfb {

/// Shape produced by the video backbone for a frames x height x width clip:
/// temporal stride 2 overall, spatial stride 16, `channels` output planes.
/// A 32 x 224 x 224 clip maps to 16 x 14 x 14 x 2048.
inline Shape backbone_output_shape(std::size_t frames, std::size_t height,
                                   std::size_t width,
                                   std::size_t channels = 2048) {
  if (frames == 0 || frames % 2 != 0) {
    throw ValueError("backbone_output_shape: frame count must be even");
  }
  if (height % 16 != 0 || width % 16 != 0) {
    throw ValueError("backbone_output_shape: spatial dims must be multiples "
                     "of 16");
  }
  return Shape{frames / 2, height / 16, width / 16, channels};
}

/// Averages a T x H x W x C feature volume over time.
template <typename T>
TensorT<T> temporal_avg_pool(const TensorT<T>& volume) {
  if (volume.rank() != 4) {
    throw ShapeError("temporal_avg_pool: expected T x H x W x C volume");
  }
  const std::size_t t = volume.shape()[0], h = volume.shape()[1],
                    w = volume.shape()[2], c = volume.shape()[3];
  if (t == 0) throw ValueError("temporal_avg_pool: empty time axis");
  TensorT<T> out(Shape{h, w, c});
  for (std::size_t ti = 0; ti < t; ++ti) {
    for (std::size_t i = 0; i < h * w * c; ++i) {
      out.at(i) += volume.at(ti * h * w * c + i);
    }
  }
  for (T& v : out.data()) v /= T(t);
  return out;
}

struct RoiAlignSpec {
  std::size_t out_h = 7;
  std::size_t out_w = 7;
  std::size_t sampling_ratio = 2;          // samples per bin axis
  double spatial_scale = 1.0 / 16.0;       // feature cells per image pixel
};

namespace detail {

/// Bilinear lookup on an H x W x C map at continuous feature coordinates,
/// clamped to the border cells.
template <typename T>
T bilinear_at(const TensorT<T>& map, double y, double x, std::size_t c) {
  const std::size_t h = map.shape()[0], w = map.shape()[1];
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const std::size_t y0 = static_cast<std::size_t>(y);
  const std::size_t x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double ly = y - static_cast<double>(y0);
  const double lx = x - static_cast<double>(x0);
  return static_cast<T>(
      (1 - ly) * (1 - lx) * map.at(y0, x0, c) +
      (1 - ly) * lx * map.at(y0, x1, c) +
      ly * (1 - lx) * map.at(y1, x0, c) +
      ly * lx * map.at(y1, x1, c));
}

}  // namespace detail

/// Aligned RoI pooling on an H x W x C map. The box is given in image
/// coordinates and clipped to the crop first; each output bin averages
/// sampling_ratio^2 bilinear samples taken at half-pixel-aligned positions
/// (image coordinate p maps to feature coordinate p*scale - 0.5). Returns
/// out_h x out_w x C.
template <typename T>
TensorT<T> roi_align(const TensorT<T>& map, const Box& box,
                     const RoiAlignSpec& spec = {}) {
  if (map.rank() != 3) {
    throw ShapeError("roi_align: expected H x W x C map");
  }
  if (spec.sampling_ratio == 0 || spec.out_h == 0 || spec.out_w == 0) {
    throw ValueError("roi_align: output size and sampling ratio must be "
                     "positive");
  }
  const std::size_t h = map.shape()[0], w = map.shape()[1],
                    c = map.shape()[2];
  const double img_w = static_cast<double>(w) / spec.spatial_scale;
  const double img_h = static_cast<double>(h) / spec.spatial_scale;
  const Box roi = clip_box(box, img_w, img_h);
  const double bin_h = (roi.y2 - roi.y1) / static_cast<double>(spec.out_h);
  const double bin_w = (roi.x2 - roi.x1) / static_cast<double>(spec.out_w);
  const std::size_t ratio = spec.sampling_ratio;
  TensorT<T> out(Shape{spec.out_h, spec.out_w, c});
  for (std::size_t ph = 0; ph < spec.out_h; ++ph) {
    for (std::size_t pw = 0; pw < spec.out_w; ++pw) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (std::size_t iy = 0; iy < ratio; ++iy) {
          const double yi = roi.y1 + static_cast<double>(ph) * bin_h +
                            (static_cast<double>(iy) + 0.5) * bin_h /
                                static_cast<double>(ratio);
          for (std::size_t ix = 0; ix < ratio; ++ix) {
            const double xi = roi.x1 + static_cast<double>(pw) * bin_w +
                              (static_cast<double>(ix) + 0.5) * bin_w /
                                  static_cast<double>(ratio);
            acc += detail::bilinear_at(map, yi * spec.spatial_scale - 0.5,
                                       xi * spec.spatial_scale - 0.5, ch);
          }
        }
        out.at(ph, pw, ch) = static_cast<T>(acc / double(ratio * ratio));
      }
    }
  }
  check_finite(out, "roi_align");
  return out;
}

/// Max over the spatial bins of an h x w x C grid: one C-vector.
template <typename T>
TensorT<T> spatial_max_pool(const TensorT<T>& bins) {
  if (bins.rank() != 3) {
    throw ShapeError("spatial_max_pool: expected h x w x C grid");
  }
  const std::size_t h = bins.shape()[0], w = bins.shape()[1],
                    c = bins.shape()[2];
  if (h == 0 || w == 0) throw ValueError("spatial_max_pool: empty grid");
  TensorT<T> out(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T m = bins.at(0, 0, ch);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) m = std::max(m, bins.at(i, j, ch));
    }
    out.at(ch) = m;
  }
  return out;
}

/// Actor descriptor: average the clip volume over time, align the actor box
/// to a 7 x 7 grid, then max-pool the grid into one C-vector.
template <typename T>
TensorT<T> extract_actor_feature(const TensorT<T>& volume, const Box& box,
                                 const RoiAlignSpec& spec = {}) {
  return spatial_max_pool(roi_align(temporal_avg_pool(volume), box, spec));
}

/// Splits an H x W x C map into a k x k grid of contiguous cell blocks and
/// averages each block. Rows/columns that do not divide evenly go to the
/// trailing bins. Returns k^2 x C, bins in row-major order.
template <typename T>
TensorT<T> grid_pool(const TensorT<T>& map, std::size_t k) {
  if (map.rank() != 3) throw ShapeError("grid_pool: expected H x W x C map");
  const std::size_t h = map.shape()[0], w = map.shape()[1],
                    c = map.shape()[2];
  if (k == 0 || k > h || k > w) {
    throw ValueError("grid_pool: k must be in [1, min(H, W)]");
  }
  auto bounds = [](std::size_t extent, std::size_t parts, std::size_t i) {
    const std::size_t base = extent / parts, rem = extent % parts;
    // First (parts - rem) bins take `base` cells, the rest take base + 1.
    const std::size_t plain = parts - rem;
    const std::size_t start = i <= plain
                                  ? base * i
                                  : base * plain + (base + 1) * (i - plain);
    const std::size_t len = i < plain ? base : base + 1;
    return std::pair<std::size_t, std::size_t>{start, start + len};
  };
  TensorT<T> out(Shape{k * k, c});
  for (std::size_t bi = 0; bi < k; ++bi) {
    const auto [y0, y1] = bounds(h, k, bi);
    for (std::size_t bj = 0; bj < k; ++bj) {
      const auto [x0, x1] = bounds(w, k, bj);
      const std::size_t count = (y1 - y0) * (x1 - x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (std::size_t i = y0; i < y1; ++i) {
          for (std::size_t j = x0; j < x1; ++j) acc += map.at(i, j, ch);
        }
        out.at(bi * k + bj, ch) = acc / T(count);
      }
    }
  }
  return out;
}

/// Whole-map average: grid_pool with k = 1, one C-dim row.
template <typename T>
TensorT<T> global_pool(const TensorT<T>& map) {
  return grid_pool(map, 1);
}

}  // namespace lfb
