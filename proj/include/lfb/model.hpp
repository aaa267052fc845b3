#pragma once

#include <string>
#include <vector>

#include "lfb/fbo.hpp"
#include "lfb/ops.hpp"
#include "lfb/rng.hpp"
#include "lfb/tape.hpp"

namespace lfb {

/// Which operator relates the clip to its long-range context.
enum class FboKind {
  kNone,  // no context: pooled clip features only
  kNl,    // attention stack over the bank window
  kAvg,   // mean-pooled bank window
  kMax,   // max-pooled bank window
  kSto,   // attention over the clip's own rows (short-term baseline)
};

inline const char* fbo_kind_name(FboKind kind) {
  switch (kind) {
    case FboKind::kNone: return "none";
    case FboKind::kNl: return "nl";
    case FboKind::kAvg: return "avg";
    case FboKind::kMax: return "max";
    case FboKind::kSto: return "sto";
  }
  return "?";
}

inline FboKind parse_fbo_kind(const std::string& name) {
  if (name == "none") return FboKind::kNone;
  if (name == "nl") return FboKind::kNl;
  if (name == "avg") return FboKind::kAvg;
  if (name == "max") return FboKind::kMax;
  if (name == "sto") return FboKind::kSto;
  throw ValueError("unknown operator '" + name +
                   "' (expected nl, avg, max, none, or sto)");
}

struct ModelConfig {
  std::size_t d_in = 32;     ///< raw feature width (bank and clip rows)
  std::size_t d_model = 32;  ///< trunk output width
  std::size_t num_classes = 5;
  FboKind fbo = FboKind::kNl;
  FboConfig fbo_cfg;  ///< attention stack settings (d_f, layers, ...)
  std::size_t num_distractors = 8;  ///< sto training regularizer rows

  void validate() const {
    std::vector<std::string> problems;
    if (d_in == 0) problems.push_back("model.d_in must be positive");
    if (d_model == 0) problems.push_back("model.d_model must be positive");
    if (num_classes < 2) {
      problems.push_back("model.num_classes must be at least 2");
    }
    if (fbo == FboKind::kNl || fbo == FboKind::kSto) {
      for (std::string& p : fbo_cfg.validate()) {
        problems.push_back(std::move(p));
      }
    }
    if (!problems.empty()) throw ConfigError(problems);
  }
};

/// Classifier over a short clip with optional long-range context.
///
/// The trunk (one linear+relu layer standing in for the feature backbone)
/// lifts raw rows to d_model. The clip descriptor is the mean of its trunk
/// rows; depending on the operator kind, the context descriptor is the
/// pooled attention output, the pooled bank window, or absent. Descriptors
/// are concatenated and classified by a linear head.
template <typename T>
class LfbModelT {
 public:
  static LfbModelT init(const ModelConfig& cfg, RngStream& rng) {
    cfg.validate();
    LfbModelT m;
    m.cfg_ = cfg;
    TensorT<T> tw(Shape{cfg.d_in, cfg.d_model});
    fill_gaussian(tw, rng, T(0), T(1) / std::sqrt(T(cfg.d_in)));
    m.trunk_w_ = ParameterT<T>(std::move(tw));
    m.trunk_b_ = ParameterT<T>(TensorT<T>(Shape{cfg.d_model}));
    if (m.uses_stack()) {
      m.stack_ = init_fbo_stack<T>(cfg.d_model, cfg.fbo_cfg, rng);
    }
    const std::size_t hw = m.head_width();
    TensorT<T> hw_t(Shape{hw, cfg.num_classes});
    fill_gaussian(hw_t, rng, T(0), T(1) / std::sqrt(T(hw)));
    m.head_w_ = ParameterT<T>(std::move(hw_t));
    m.head_b_ = ParameterT<T>(TensorT<T>(Shape{cfg.num_classes}));
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  bool uses_stack() const {
    return cfg_.fbo == FboKind::kNl || cfg_.fbo == FboKind::kSto;
  }
  bool uses_window() const {
    return cfg_.fbo == FboKind::kNl || cfg_.fbo == FboKind::kAvg ||
           cfg_.fbo == FboKind::kMax;
  }

  /// Width of the concatenated head input for the configured operator.
  std::size_t head_width() const {
    switch (cfg_.fbo) {
      case FboKind::kNone: return cfg_.d_model;
      case FboKind::kNl:
      case FboKind::kSto: return cfg_.d_model + cfg_.fbo_cfg.d_f;
      case FboKind::kAvg:
      case FboKind::kMax: return 2 * cfg_.d_model;
    }
    return cfg_.d_model;
  }

  /// Computes 1 x num_classes logits for one sample.
  ///
  /// `window_rows` (with optional validity `window_mask`) is required for
  /// the window-consuming kinds and may have zero rows. `distractor_rows`
  /// are pre-sampled raw bank rows for sto training; they pass through the
  /// trunk outside the tape, so no gradient reaches them or the trunk
  /// through them.
  VarT<T> forward(TapeT<T>& tape, const TensorT<T>& clip,
                  const TensorT<T>* window_rows, const Mask* window_mask,
                  const TensorT<T>* distractor_rows, RngStream& dropout_rng,
                  bool training) const {
    if (clip.rank() != 2 || clip.cols() != cfg_.d_in || clip.rows() == 0) {
      throw ShapeError("model: clip must be N x " + std::to_string(cfg_.d_in) +
                       " with N > 0, got " + shape_str(clip.shape()));
    }
    if (uses_window() && window_rows == nullptr) {
      throw ValueError("model: operator '" +
                       std::string(fbo_kind_name(cfg_.fbo)) +
                       "' needs a bank window");
    }

    const VarT<T> h_clip = trunk(tape, constant(clip));
    const VarT<T> pooled = mean_rows(tape, h_clip);
    VarT<T> head_in;
    switch (cfg_.fbo) {
      case FboKind::kNone:
        head_in = pooled;
        break;
      case FboKind::kNl: {
        const VarT<T> h_bank = trunk(tape, constant(*window_rows));
        const VarT<T> o = fbo_nl(tape, h_clip, h_bank, window_mask, stack_,
                                 cfg_.fbo_cfg, dropout_rng, training);
        head_in = concat_cols(tape, pooled, mean_rows(tape, o));
        break;
      }
      case FboKind::kAvg:
      case FboKind::kMax: {
        const VarT<T> h_bank = trunk(tape, constant(*window_rows));
        const Mask mask = window_mask ? *window_mask : Mask{};
        const VarT<T> ctx = cfg_.fbo == FboKind::kAvg
                                ? mean_rows(tape, h_bank, mask)
                                : max_rows(tape, h_bank, mask);
        head_in = concat_cols(tape, pooled, ctx);
        break;
      }
      case FboKind::kSto: {
        VarT<T> kv = h_clip;
        if (training && distractor_rows && distractor_rows->rows() > 0) {
          // Detached trunk pass: constants by construction.
          const TensorT<T> lifted =
              relu(linear(*distractor_rows, trunk_w_.value(),
                          trunk_b_.value()));
          kv = concat_rows(tape, kv, constant(lifted));
        }
        const VarT<T> o = fbo_nl(tape, h_clip, kv, nullptr, stack_,
                                 cfg_.fbo_cfg, dropout_rng, training);
        head_in = concat_cols(tape, pooled, mean_rows(tape, o));
        break;
      }
    }
    return linear(tape, head_in, head_w_, head_b_);
  }

  /// Every parameter, named for checkpoints and the optimizer. LayerNorm
  /// scales/offsets and biases are flagged out of weight decay.
  std::vector<NamedParamT<T>> parameters() const {
    std::vector<NamedParamT<T>> out;
    out.push_back({"trunk.w", trunk_w_, true});
    out.push_back({"trunk.b", trunk_b_, false});
    if (uses_stack()) {
      if (cfg_.fbo_cfg.share_reduction) {
        out.push_back({"reduce.w", stack_.reduction.w_short, true});
      } else {
        out.push_back({"reduce.short.w", stack_.reduction.w_short, true});
        out.push_back({"reduce.bank.w", stack_.reduction.w_bank, true});
      }
      for (std::size_t i = 0; i < stack_.blocks.size(); ++i) {
        const auto& b = stack_.blocks[i];
        const std::string p = "nl" + std::to_string(i) + ".";
        out.push_back({p + "theta.w", b.w_theta, true});
        out.push_back({p + "phi.w", b.w_phi, true});
        out.push_back({p + "g.w", b.w_g, true});
        out.push_back({p + "out.w", b.w_out, true});
        out.push_back({p + "out.b", b.b_out, false});
        out.push_back({p + "ln.gamma", b.ln_gamma, false});
        out.push_back({p + "ln.beta", b.ln_beta, false});
        out.push_back({p + "score_q.w", b.w_score_q, true});
        out.push_back({p + "score_k.w", b.w_score_k, true});
      }
    }
    out.push_back({"head.w", head_w_, true});
    out.push_back({"head.b", head_b_, false});
    return out;
  }

  /// Parameters the optimizer may move; a frozen trunk is excluded so its
  /// values stay bitwise intact through later stages.
  std::vector<NamedParamT<T>> trainable(bool freeze_trunk) const {
    std::vector<NamedParamT<T>> out;
    for (auto& np : parameters()) {
      if (freeze_trunk && np.name.rfind("trunk.", 0) == 0) continue;
      out.push_back(std::move(np));
    }
    return out;
  }

 private:
  VarT<T> trunk(TapeT<T>& tape, const VarT<T>& x) const {
    return relu(tape, linear(tape, x, trunk_w_, trunk_b_));
  }

  ModelConfig cfg_;
  ParameterT<T> trunk_w_, trunk_b_;
  FboStackT<T> stack_;
  ParameterT<T> head_w_, head_b_;
};

using LfbModel = LfbModelT<double>;

}  // namespace lfb
