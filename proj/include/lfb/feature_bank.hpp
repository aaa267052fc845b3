#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "lfb/ops.hpp"
#include "lfb/tensor.hpp"

namespace lfb {

enum class WindowMode {
  kBatch,   // centered: the 2w+1 steps [t-w, t+w]
  kCausal,  // trailing: the 2w+1 steps [t-2w, t], nothing after t
};

/// Half-window w. Both modes cover at most 2w+1 steps and clip at the bank
/// boundaries; the causal window keeps the same extent but ends at the query
/// step instead of straddling it.
struct WindowSpec {
  std::size_t half_window = 0;
  WindowMode mode = WindowMode::kBatch;
};

/// Rows gathered from a window, stacked in increasing step order with the
/// within-step row order preserved. `provenance[i]` records which (step, row)
/// produced stacked row i.
template <typename T>
struct WindowedFeaturesT {
  TensorT<T> rows;  // N x d; N may be 0
  std::vector<std::pair<std::size_t, std::size_t>> provenance;
};

using WindowedFeatures = WindowedFeaturesT<double>;

/// Time-indexed feature store: one N_t x d matrix per step, d fixed at
/// construction, steps append-only. N_t varies per step and may be zero
/// (a step with no detected actors still occupies its time slot).
template <typename T>
class FeatureBankT {
 public:
  explicit FeatureBankT(std::size_t dim, double steps_per_second = 1.0)
      : dim_(dim), steps_per_second_(steps_per_second) {
    if (dim == 0) throw ValueError("feature bank: dim must be positive");
    if (!(steps_per_second > 0.0) || !std::isfinite(steps_per_second)) {
      throw ValueError("feature bank: steps_per_second must be positive");
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t num_steps() const { return steps_.size(); }
  double steps_per_second() const { return steps_per_second_; }

  /// Appends the features for the next step; shape must be N_t x dim.
  void append_step(TensorT<T> features) {
    if (features.rank() != 2 || features.cols() != dim_) {
      throw ShapeError("feature bank: step must be N x " +
                       std::to_string(dim_) + ", got " +
                       shape_str(features.shape()));
    }
    check_finite(features, "feature bank step");
    steps_.push_back(std::move(features));
  }

  const TensorT<T>& step(std::size_t t) const {
    if (t >= steps_.size()) {
      throw ValueError("feature bank: step " + std::to_string(t) +
                       " out of range [0, " + std::to_string(steps_.size()) +
                       ")");
    }
    return steps_[t];
  }

  std::size_t step_rows(std::size_t t) const { return step(t).rows(); }

  std::size_t total_rows() const {
    std::size_t n = 0;
    for (const auto& s : steps_) n += s.rows();
    return n;
  }

  /// Step range [first, last] covered by the window at t, after clipping.
  std::pair<std::size_t, std::size_t> window_range(
      std::size_t t, const WindowSpec& spec) const {
    if (t >= steps_.size()) {
      throw ValueError("feature bank: window query step " + std::to_string(t) +
                       " out of range");
    }
    const std::size_t w = spec.half_window;
    std::size_t first, last;
    if (spec.mode == WindowMode::kBatch) {
      first = t >= w ? t - w : 0;
      last = std::min(steps_.size() - 1, t + w);
    } else {
      first = t >= 2 * w ? t - 2 * w : 0;
      last = t;
    }
    return {first, last};
  }

  /// Stacks the windowed steps into one N x d matrix. N is the sum of the
  /// covered steps' row counts and may be zero; the column count is always d.
  WindowedFeaturesT<T> window(std::size_t t, const WindowSpec& spec) const {
    const auto [first, last] = window_range(t, spec);
    std::size_t total = 0;
    for (std::size_t s = first; s <= last; ++s) total += steps_[s].rows();
    WindowedFeaturesT<T> out;
    out.rows = TensorT<T>(Shape{total, dim_});
    out.provenance.reserve(total);
    std::size_t r = 0;
    for (std::size_t s = first; s <= last; ++s) {
      const TensorT<T>& m = steps_[s];
      for (std::size_t i = 0; i < m.rows(); ++i, ++r) {
        for (std::size_t j = 0; j < dim_; ++j) {
          out.rows.at(r, j) = m.at(i, j);
        }
        out.provenance.emplace_back(s, i);
      }
    }
    return out;
  }

 private:
  std::size_t dim_;
  double steps_per_second_;
  std::vector<TensorT<T>> steps_;
};

using FeatureBank = FeatureBankT<double>;

/// A batch of windows padded to a common row count, with a row-validity mask.
/// Padding rows are zero; mask entry b*padded_rows + i is nonzero iff row i
/// of sample b is real.
template <typename T>
struct PaddedBatchT {
  TensorT<T> features;  // batch x padded_rows x dim
  Mask mask;            // batch * padded_rows
  std::size_t batch = 0;
  std::size_t padded_rows = 0;
  std::size_t dim = 0;

  /// Key mask for one sample, length padded_rows.
  Mask sample_mask(std::size_t b) const {
    return Mask(mask.begin() + static_cast<std::ptrdiff_t>(b * padded_rows),
                mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * padded_rows));
  }

  /// Feature matrix for one sample, padded_rows x dim.
  TensorT<T> sample_features(std::size_t b) const {
    TensorT<T> f(Shape{padded_rows, dim});
    for (std::size_t i = 0; i < padded_rows; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        f.at(i, j) = features.at(b, i, j);
      }
    }
    return f;
  }
};

using PaddedBatch = PaddedBatchT<double>;

/// Pads a set of windows to max row count (or to `padded_rows` if given,
/// which must not be smaller than any window).
template <typename T>
PaddedBatchT<T> pad_and_mask(const std::vector<WindowedFeaturesT<T>>& windows,
                             std::optional<std::size_t> padded_rows = {}) {
  PaddedBatchT<T> out;
  out.batch = windows.size();
  if (windows.empty()) return out;
  out.dim = windows.front().rows.cols();
  std::size_t max_rows = 0;
  for (const auto& w : windows) {
    if (w.rows.cols() != out.dim) {
      throw ShapeError("pad_and_mask: mixed feature dims in batch");
    }
    max_rows = std::max(max_rows, w.rows.rows());
  }
  if (padded_rows) {
    if (*padded_rows < max_rows) {
      throw ValueError("pad_and_mask: padded_rows " +
                       std::to_string(*padded_rows) +
                       " smaller than largest window " +
                       std::to_string(max_rows));
    }
    max_rows = *padded_rows;
  }
  out.padded_rows = max_rows;
  out.features = TensorT<T>(Shape{out.batch, max_rows, out.dim});
  out.mask.assign(out.batch * max_rows, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const TensorT<T>& rows = windows[b].rows;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      out.mask[b * max_rows + i] = 1;
      for (std::size_t j = 0; j < out.dim; ++j) {
        out.features.at(b, i, j) = rows.at(i, j);
      }
    }
  }
  return out;
}

}  // namespace lfb
