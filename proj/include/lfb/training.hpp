#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lfb/box.hpp"
#include "lfb/ops.hpp"
#include "lfb/tape.hpp"
#include "lfb/tensor.hpp"

namespace lfb {

// ---------------------------------------------------------------------------
// Losses. Both are tape ops with analytic backward closures; targets and
// labels are constants, so only the logits receive gradients.
// ---------------------------------------------------------------------------

namespace detail {

/// Numerically stable sigmoid.
template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace detail

/// Mean-reduced multi-label sigmoid cross entropy. Per element the stable
/// form max(z,0) - z*t + log1p(exp(-|z|)) is used; targets may be soft.
template <typename T>
VarT<T> bce_multilabel_loss(TapeT<T>& tape, const VarT<T>& logits,
                            const TensorT<T>& targets) {
  const TensorT<T>& z = logits.value();
  if (!z.same_shape(targets)) {
    throw ShapeError("bce_multilabel_loss: logits " + shape_str(z.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  }
  if (z.empty()) throw ValueError("bce_multilabel_loss: empty logits");
  check_finite(targets, "bce_multilabel_loss targets");

  T total = T(0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T zi = z.at(i), ti = targets.at(i);
    total += std::max(zi, T(0)) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
  }
  TensorT<T> out(Shape{1});
  out.at(0) = total / T(z.size());
  check_finite(out, "bce_multilabel_loss");

  VarT<T> loss(std::move(out));
  tape.record([logits, targets, loss] {
    const TensorT<T>& zv = logits.value();
    const T seed = loss.grad().at(0) / T(zv.size());
    TensorT<T> g(zv.shape());
    for (std::size_t i = 0; i < zv.size(); ++i) {
      g.at(i) = seed * (detail::sigmoid(zv.at(i)) - targets.at(i));
    }
    logits.accumulate_grad(g);
  });
  return loss;
}

/// Mean-reduced softmax cross entropy against integer class labels.
template <typename T>
VarT<T> ce_loss(TapeT<T>& tape, const VarT<T>& logits,
                const std::vector<std::size_t>& labels) {
  const TensorT<T>& z = logits.value();
  if (z.rank() != 2) {
    throw ShapeError("ce_loss: logits must be rank 2, got " +
                     shape_str(z.shape()));
  }
  const std::size_t m = z.shape()[0], c = z.shape()[1];
  if (labels.size() != m) {
    throw ShapeError("ce_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(m) + " rows");
  }
  if (m == 0 || c == 0) throw ValueError("ce_loss: empty logits");
  for (std::size_t label : labels) {
    if (label >= c) {
      throw ValueError("ce_loss: label " + std::to_string(label) +
                       " out of range for " + std::to_string(c) + " classes");
    }
  }

  T total = T(0);
  for (std::size_t i = 0; i < m; ++i) {
    T row_max = z.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) row_max = std::max(row_max, z.at(i, j));
    T sum = T(0);
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z.at(i, j) - row_max);
    total += row_max + std::log(sum) - z.at(i, labels[i]);
  }
  TensorT<T> out(Shape{1});
  out.at(0) = total / T(m);
  check_finite(out, "ce_loss");

  VarT<T> loss(std::move(out));
  tape.record([logits, labels, loss, m, c] {
    const TensorT<T>& zv = logits.value();
    const T seed = loss.grad().at(0) / T(m);
    TensorT<T> g(zv.shape());
    for (std::size_t i = 0; i < m; ++i) {
      T row_max = zv.at(i, 0);
      for (std::size_t j = 1; j < c; ++j) {
        row_max = std::max(row_max, zv.at(i, j));
      }
      T sum = T(0);
      for (std::size_t j = 0; j < c; ++j) {
        sum += std::exp(zv.at(i, j) - row_max);
      }
      for (std::size_t j = 0; j < c; ++j) {
        const T p = std::exp(zv.at(i, j) - row_max) / sum;
        g.at(i, j) = seed * (p - (j == labels[i] ? T(1) : T(0)));
      }
    }
    logits.accumulate_grad(g);
  });
  return loss;
}

// ---------------------------------------------------------------------------
// Label assignment for detection-style training.
// ---------------------------------------------------------------------------

/// Annotated instance: one box carrying a set of class labels.
struct LabeledBox {
  Box box;
  std::vector<std::size_t> labels;
};

/// Detector output considered as a training or inference region.
struct ScoredBox {
  Box box;
  double score = 0;
};

struct AssignConfig {
  double iou_assign = 0.9;       ///< overlap needed to inherit labels
  double train_score_min = 0.9;  ///< detector confidence floor in training
  double test_score_min = 0.85;  ///< detector confidence floor at test time

  void validate() const {
    std::vector<std::string> problems;
    auto in_unit = [&](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0)) {
        problems.push_back(std::string(what) + " must be in [0, 1], got " +
                           std::to_string(v));
      }
    };
    in_unit(iou_assign, "iou_assign");
    in_unit(train_score_min, "train_score_min");
    in_unit(test_score_min, "test_score_min");
    if (!problems.empty()) throw ConfigError(problems);
  }
};

/// Picks the boxes a model trains on or evaluates: at training time every
/// ground-truth box plus confident detections, at test time confident
/// detections only.
inline std::vector<Box> select_boxes(const std::vector<LabeledBox>& gt,
                                     const std::vector<ScoredBox>& preds,
                                     const AssignConfig& cfg, bool training) {
  cfg.validate();
  std::vector<Box> out;
  if (training) {
    for (const auto& g : gt) out.push_back(g.box);
  }
  const double floor = training ? cfg.train_score_min : cfg.test_score_min;
  for (const auto& p : preds) {
    if (p.score >= floor) out.push_back(p.box);
  }
  return out;
}

/// Multi-hot targets: each box inherits the union of the labels of every
/// ground-truth instance it overlaps at IoU >= iou_assign. Boxes matching
/// nothing get an all-zero row, which the loss treats as negative everywhere.
template <typename T = double>
TensorT<T> assign_labels(const std::vector<Box>& boxes,
                         const std::vector<LabeledBox>& gt,
                         const AssignConfig& cfg, std::size_t num_classes) {
  cfg.validate();
  if (num_classes == 0) throw ValueError("assign_labels: num_classes is 0");
  for (const auto& g : gt) {
    for (std::size_t label : g.labels) {
      if (label >= num_classes) {
        throw ValueError("assign_labels: label " + std::to_string(label) +
                         " out of range for " + std::to_string(num_classes) +
                         " classes");
      }
    }
  }
  TensorT<T> targets(Shape{boxes.size(), num_classes});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (const auto& g : gt) {
      if (iou(boxes[i], g.box) >= cfg.iou_assign) {
        for (std::size_t label : g.labels) targets.at(i, label) = T(1);
      }
    }
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Learning-rate schedules.
// ---------------------------------------------------------------------------

/// One piecewise-constant segment boundary: from `start_iteration` onward the
/// base rate is scaled by `multiplier`. Keeping the multiplier rather than a
/// precomputed rate lets presets whose base rate is not exactly representable
/// (0.0003) still express "divide by ten" without accumulating rounding.
struct ScheduleEntry {
  std::size_t start_iteration = 0;
  double multiplier = 1.0;
};

struct SgdSchedule {
  double base_lr = 0.0;
  std::vector<ScheduleEntry> drops;  ///< strictly increasing start iterations
  std::size_t total_iterations = 0;

  void validate() const {
    std::vector<std::string> problems;
    if (!(base_lr > 0)) {
      problems.push_back("base_lr must be positive, got " +
                         std::to_string(base_lr));
    }
    for (std::size_t i = 0; i < drops.size(); ++i) {
      if (drops[i].start_iteration == 0) {
        problems.push_back("drop " + std::to_string(i) +
                           " starts at iteration 0; fold it into base_lr");
      }
      if (i > 0 &&
          drops[i].start_iteration <= drops[i - 1].start_iteration) {
        problems.push_back("drops must be strictly increasing; entry " +
                           std::to_string(i) + " starts at " +
                           std::to_string(drops[i].start_iteration) +
                           " after " +
                           std::to_string(drops[i - 1].start_iteration));
      }
      if (!(drops[i].multiplier > 0)) {
        problems.push_back("drop " + std::to_string(i) +
                           " multiplier must be positive");
      }
    }
    if (total_iterations == 0) {
      problems.push_back("total_iterations must be positive");
    }
    if (!problems.empty()) throw ConfigError(problems);
  }

  /// Learning rate in effect at iteration `iter` (0-based).
  double lr_at(std::size_t iter) const {
    validate();
    double multiplier = 1.0;
    for (const auto& drop : drops) {
      if (iter >= drop.start_iteration) multiplier = drop.multiplier;
    }
    return base_lr * multiplier;
  }
};

/// Named training recipe: schedule plus the matching weight decay.
struct TrainPreset {
  std::string name;
  SgdSchedule schedule;
  double weight_decay = 0.0;
};

inline const std::vector<TrainPreset>& train_presets() {
  static const std::vector<TrainPreset> presets = {
      {"ava-140k",
       {0.04, {{100000, 0.1}, {120000, 0.01}}, 140000},
       1e-6},
      {"epic-verb-36k",
       {0.0003, {{28000, 0.1}, {32000, 0.01}}, 36000},
       1e-5},
      {"epic-noun-50k",
       {0.001, {{40000, 0.1}, {45000, 0.01}}, 50000},
       1e-6},
      {"charades-24k", {0.02, {{20000, 0.1}}, 24000}, 1.25e-5},
  };
  return presets;
}

inline const TrainPreset& train_preset(const std::string& name) {
  for (const auto& p : train_presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : train_presets()) {
    if (!known.empty()) known += ", ";
    known += p.name;
  }
  throw ValueError("unknown training preset '" + name + "' (known: " + known +
                   ")");
}

// ---------------------------------------------------------------------------
// SGD with momentum and decoupled-by-flag weight decay.
// ---------------------------------------------------------------------------

/// Plain momentum SGD: v <- momentum*v + grad + wd*param, param -= lr*v.
/// Weight decay is skipped for parameters flagged decay=false. Buffers are
/// keyed by parameter name and created lazily at zero.
template <typename T>
class SgdOptimizerT {
 public:
  SgdOptimizerT(SgdSchedule schedule, T weight_decay, T momentum = T(0.9))
      : schedule_(std::move(schedule)),
        weight_decay_(weight_decay),
        momentum_(momentum) {
    schedule_.validate();
    if (!(momentum_ >= 0 && momentum_ < 1)) {
      throw ValueError("momentum must be in [0, 1), got " +
                       std::to_string(momentum_));
    }
    if (weight_decay_ < 0) throw ValueError("weight decay must not be negative");
  }

  const SgdSchedule& schedule() const { return schedule_; }

  /// Applies one update at `iter` and zeroes the consumed gradients.
  void step(std::vector<NamedParamT<T>>& params, std::size_t iter) {
    const T lr = T(schedule_.lr_at(iter));
    for (auto& np : params) {
      TensorT<T>& p = np.param.value();
      TensorT<T>& g = np.param.grad();
      TensorT<T>& v = buffer_for(np.name, p.shape());
      const T wd = np.decay ? weight_decay_ : T(0);
      for (std::size_t i = 0; i < p.size(); ++i) {
        v.at(i) = momentum_ * v.at(i) + g.at(i) + wd * p.at(i);
        p.at(i) -= lr * v.at(i);
      }
      check_finite(p, ("sgd_step '" + np.name + "'").c_str());
      np.param.zero_grad();
    }
  }

 private:
  TensorT<T>& buffer_for(const std::string& name, const Shape& shape) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) {
      it = buffers_.emplace(name, TensorT<T>(shape)).first;
    } else if (it->second.shape() != shape) {
      throw ShapeError("momentum buffer for '" + name +
                       "' has shape " + shape_str(it->second.shape()) +
                       " but parameter is " + shape_str(shape));
    }
    return it->second;
  }

  SgdSchedule schedule_;
  T weight_decay_;
  T momentum_;
  std::map<std::string, TensorT<T>> buffers_;
};

using SgdOptimizer = SgdOptimizerT<double>;

}  // namespace lfb
