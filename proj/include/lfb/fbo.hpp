#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lfb/ops.hpp"
#include "lfb/rng.hpp"
#include "lfb/tape.hpp"

namespace lfb {

/// How a block turns query/key agreement into attention weights.
enum class NlVariant {
  kEmbeddedGaussian,  // softmax over scaled dot products
  kDotProduct,        // scaled dot products, averaged by visible key count
  kConcat,            // ReLU(score_q(q) + score_k(k)), averaged likewise
};

/// Where the residual nonlinearity sits relative to the block output.
enum class ActivationOrder { kPre, kPost };

/// Feature bank operator hyperparameters. Defaults are the reference
/// configuration: 2-layer softmax attention, scaled logits, LayerNorm and
/// dropout 0.2, operating at d_f = 512 below the 2048-dim inputs.
struct FboConfig {
  NlVariant variant = NlVariant::kEmbeddedGaussian;
  std::size_t layers = 2;  // blocks in the stack, 1..3
  ActivationOrder activation = ActivationOrder::kPre;
  bool use_scale = true;     // 1/sqrt(d_f) on dot-product logits
  bool use_ln = true;
  double dropout_rate = 0.2;
  std::size_t d_f = 512;
  /// One shared input-reduction projection instead of separate short-term
  /// and bank projections.
  bool share_reduction = false;
  /// Compatibility switch: let zero padding rows join attention as ordinary
  /// keys instead of being masked out.
  bool unmasked_zero_pad = false;

  std::vector<std::string> validate() const {
    std::vector<std::string> problems;
    if (layers < 1 || layers > 3) {
      problems.push_back("fbo.layers must be in [1, 3], got " +
                         std::to_string(layers));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      problems.push_back("fbo.dropout_rate must be in [0, 1)");
    }
    if (d_f == 0) problems.push_back("fbo.d_f must be positive");
    return problems;
  }
};

/// Weights of one modified non-local block at width d_f. The score vectors
/// are only used by the concat variant; they are the two halves of the
/// learned vector over concatenated (query, key) pairs.
template <typename T>
struct NlBlockParamsT {
  ParameterT<T> w_theta, w_phi, w_g;  // d_f x d_f projections
  ParameterT<T> w_out;                // d_f x d_f output transform
  ParameterT<T> b_out;                // d_f
  ParameterT<T> ln_gamma, ln_beta;    // d_f
  ParameterT<T> w_score_q, w_score_k;  // d_f x 1
};

using NlBlockParams = NlBlockParamsT<double>;

template <typename T>
NlBlockParamsT<T> init_nl_block(std::size_t d_f, RngStream& rng) {
  const T std = T(1) / std::sqrt(T(d_f));
  auto proj = [&] {
    TensorT<T> w(Shape{d_f, d_f});
    fill_gaussian(w, rng, T(0), std);
    return ParameterT<T>(std::move(w));
  };
  NlBlockParamsT<T> p;
  p.w_theta = proj();
  p.w_phi = proj();
  p.w_g = proj();
  p.w_out = proj();
  p.b_out = ParameterT<T>(TensorT<T>(Shape{d_f}));
  p.ln_gamma = ParameterT<T>(TensorT<T>::full(Shape{d_f}, T(1)));
  p.ln_beta = ParameterT<T>(TensorT<T>(Shape{d_f}));
  TensorT<T> sq(Shape{d_f, 1}), sk(Shape{d_f, 1});
  fill_gaussian(sq, rng, T(0), std);
  fill_gaussian(sk, rng, T(0), std);
  p.w_score_q = ParameterT<T>(std::move(sq));
  p.w_score_k = ParameterT<T>(std::move(sk));
  return p;
}

/// Input reduction d_in -> d_f. Bias-free; with share_reduction both handles
/// alias one node, so one update moves both.
template <typename T>
struct FboReductionT {
  ParameterT<T> w_short;  // d_in x d_f
  ParameterT<T> w_bank;   // d_in x d_f
};

template <typename T>
FboReductionT<T> init_reduction(std::size_t d_in, std::size_t d_f,
                                RngStream& rng, bool share) {
  const T std = T(1) / std::sqrt(T(d_in));
  FboReductionT<T> r;
  TensorT<T> ws(Shape{d_in, d_f});
  fill_gaussian(ws, rng, T(0), std);
  r.w_short = ParameterT<T>(std::move(ws));
  if (share) {
    r.w_bank = r.w_short;
  } else {
    TensorT<T> wb(Shape{d_in, d_f});
    fill_gaussian(wb, rng, T(0), std);
    r.w_bank = ParameterT<T>(std::move(wb));
  }
  return r;
}

/// Reduction plus the block stack; every block attends to the same reduced
/// key/value set.
template <typename T>
struct FboStackT {
  FboReductionT<T> reduction;
  std::vector<NlBlockParamsT<T>> blocks;
};

using FboStack = FboStackT<double>;

template <typename T>
FboStackT<T> init_fbo_stack(std::size_t d_in, const FboConfig& cfg,
                            RngStream& rng) {
  FboStackT<T> s;
  s.reduction = init_reduction<T>(d_in, cfg.d_f, rng, cfg.share_reduction);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    s.blocks.push_back(init_nl_block<T>(cfg.d_f, rng));
  }
  return s;
}

namespace detail {

template <typename T>
std::size_t visible_keys(const TensorT<T>& kv, const Mask* key_mask) {
  if (!key_mask) return kv.rows();
  if (key_mask->size() != kv.rows()) {
    throw ShapeError("key mask length " + std::to_string(key_mask->size()) +
                     " for " + std::to_string(kv.rows()) + " keys");
  }
  return mask_count(*key_mask);
}

}  // namespace detail

/// One modified non-local block: attention at width d_f followed by an
/// output transform, dropout, and a residual connection onto the query.
///
/// Pre-activation  : out = Q + dropout(W_out' relu(LN(H)))
/// Post-activation : out = relu(Q + dropout(LN(W_out' H)))
/// where H = A V and A is the variant's attention over visible keys.
///
/// An empty or fully masked key set has nothing to attend to; the block
/// passes the query through unchanged (and consumes no dropout draws).
template <typename T>
VarT<T> nl_block(TapeT<T>& tape, const VarT<T>& q, const VarT<T>& kv,
                 const Mask* key_mask, const NlBlockParamsT<T>& p,
                 const FboConfig& cfg, RngStream& dropout_rng, bool training) {
  const std::size_t d_f = cfg.d_f;
  if (q.value().rank() != 2 || q.value().cols() != d_f ||
      kv.value().rank() != 2 || kv.value().cols() != d_f) {
    throw ShapeError("nl_block: operands must be N x " + std::to_string(d_f));
  }
  if (cfg.unmasked_zero_pad) key_mask = nullptr;
  if (detail::visible_keys(kv.value(), key_mask) == 0) {
    return q;  // pass-through
  }
  const T rate = static_cast<T>(cfg.dropout_rate);

  VarT<T> qp = matmul(tape, q, p.w_theta);
  VarT<T> kp = matmul(tape, kv, p.w_phi);
  VarT<T> vp = matmul(tape, kv, p.w_g);

  const std::size_t n_valid = detail::visible_keys(kv.value(), key_mask);
  VarT<T> attn;
  switch (cfg.variant) {
    case NlVariant::kEmbeddedGaussian:
    case NlVariant::kDotProduct: {
      VarT<T> logits = matmul(tape, qp, transpose(tape, kp));
      if (cfg.use_scale) {
        logits = scale(tape, logits, T(1) / std::sqrt(T(d_f)));
      }
      if (cfg.variant == NlVariant::kEmbeddedGaussian) {
        Mask full = key_mask ? tile_key_mask(*key_mask, q.value().rows())
                             : Mask{};
        attn = softmax_rows(tape, logits, std::move(full));
      } else {
        if (key_mask) logits = mask_zero_cols(tape, logits, *key_mask);
        attn = scale(tape, logits, T(1) / T(n_valid));
      }
      break;
    }
    case NlVariant::kConcat: {
      VarT<T> u = matmul(tape, qp, p.w_score_q);
      VarT<T> v = matmul(tape, kp, p.w_score_k);
      VarT<T> e = relu(tape, outer_sum(tape, u, v));
      if (key_mask) e = mask_zero_cols(tape, e, *key_mask);
      attn = scale(tape, e, T(1) / T(n_valid));
      break;
    }
  }

  VarT<T> h = matmul(tape, attn, vp);
  if (cfg.activation == ActivationOrder::kPre) {
    if (cfg.use_ln) h = layer_norm(tape, h, p.ln_gamma, p.ln_beta);
    h = relu(tape, h);
    h = linear(tape, h, p.w_out, p.b_out);
    h = dropout(tape, h, rate, dropout_rng, training);
    return add(tape, q, h);
  }
  h = linear(tape, h, p.w_out, p.b_out);
  if (cfg.use_ln) h = layer_norm(tape, h, p.ln_gamma, p.ln_beta);
  h = dropout(tape, h, rate, dropout_rng, training);
  return relu(tape, add(tape, q, h));
}

/// Full operator: reduce both inputs to d_f (bias-free projection plus
/// dropout, short-term first), then run the block stack with the reduced
/// bank rows as a common key/value set. Returns N_q x d_f.
template <typename T>
VarT<T> fbo_nl(TapeT<T>& tape, const VarT<T>& short_term,
               const VarT<T>& bank_rows, const Mask* key_mask,
               const FboStackT<T>& stack, const FboConfig& cfg,
               RngStream& dropout_rng, bool training) {
  if (stack.blocks.size() != cfg.layers || cfg.layers < 1 || cfg.layers > 3) {
    throw ValueError("fbo_nl: stack must hold " + std::to_string(cfg.layers) +
                     " blocks (1..3)");
  }
  if (short_term.value().rank() != 2 || bank_rows.value().rank() != 2 ||
      short_term.value().cols() != bank_rows.value().cols()) {
    throw ShapeError("fbo_nl: inputs must share the unreduced feature dim");
  }
  if (key_mask && key_mask->size() != bank_rows.value().rows()) {
    throw ShapeError("fbo_nl: key mask length does not match bank rows");
  }
  const T rate = static_cast<T>(cfg.dropout_rate);
  VarT<T> q = dropout(tape, matmul(tape, short_term, stack.reduction.w_short),
                      rate, dropout_rng, training);
  VarT<T> k = dropout(tape, matmul(tape, bank_rows, stack.reduction.w_bank),
                      rate, dropout_rng, training);
  for (const auto& block : stack.blocks) {
    q = nl_block(tape, q, k, key_mask, block, cfg, dropout_rng, training);
  }
  return q;
}

enum class PoolKind { kAvg, kMax };

/// Parameter-free baseline: pools the raw windowed rows into a single 1 x d
/// descriptor. Average ignores masked rows entirely; max is taken over
/// visible rows only. No rows (or none visible) pools to the zero vector.
template <typename T>
TensorT<T> fbo_pool(const TensorT<T>& rows, const Mask* key_mask,
                    PoolKind kind) {
  detail::require_rank2(rows, "fbo_pool");
  if (key_mask && key_mask->size() != rows.rows()) {
    throw ShapeError("fbo_pool: key mask length does not match rows");
  }
  const std::size_t d = rows.cols();
  TensorT<T> out(Shape{1, d});
  std::size_t visible = 0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    if (key_mask && !(*key_mask)[i]) continue;
    ++visible;
    for (std::size_t j = 0; j < d; ++j) {
      const T v = rows.at(i, j);
      if (kind == PoolKind::kAvg) {
        out.at(0, j) += v;
      } else {
        out.at(0, j) = visible == 1 ? v : std::max(out.at(0, j), v);
      }
    }
  }
  if (visible == 0) return TensorT<T>(Shape{1, d});
  if (kind == PoolKind::kAvg) {
    for (std::size_t j = 0; j < d; ++j) out.at(0, j) /= T(visible);
  }
  return out;
}

/// Short-term-only baseline options. During training, `num_distractors`
/// rows sampled (with replacement) from the reservoir are appended to the
/// key/value set as a regularizer; they receive attention but no gradient
/// reaches them.
template <typename T>
struct StoOptionsT {
  std::size_t num_distractors = 8;
  const TensorT<T>* reservoir = nullptr;  // R x d_in
};

using StoOptions = StoOptionsT<double>;

/// Short-term operator: the same attention stack, but keys and values come
/// from the clip itself instead of the bank window.
template <typename T>
VarT<T> sto(TapeT<T>& tape, const VarT<T>& short_q, const VarT<T>& clip_rows,
            const StoOptionsT<T>& opts, const FboStackT<T>& stack,
            const FboConfig& cfg, RngStream& dropout_rng,
            RngStream* distractor_rng, bool training) {
  VarT<T> kv = clip_rows;
  if (training && opts.num_distractors > 0 && opts.reservoir &&
      opts.reservoir->rows() > 0) {
    if (!distractor_rng) {
      throw ValueError("sto: distractor sampling requires an rng stream");
    }
    TensorT<T> sampled(Shape{opts.num_distractors, opts.reservoir->cols()});
    for (std::size_t i = 0; i < opts.num_distractors; ++i) {
      const std::size_t r = static_cast<std::size_t>(
          distractor_rng->next_below(opts.reservoir->rows()));
      for (std::size_t j = 0; j < opts.reservoir->cols(); ++j) {
        sampled.at(i, j) = opts.reservoir->at(r, j);
      }
    }
    kv = concat_rows(tape, kv, constant(std::move(sampled)));
  }
  return fbo_nl(tape, short_q, kv, nullptr, stack, cfg, dropout_rng, training);
}

/// Joins the short-term features with the operator output along columns.
/// A single pooled row is broadcast across the short-term rows first.
template <typename T>
VarT<T> assemble_head_input(TapeT<T>& tape, const VarT<T>& short_term,
                            const VarT<T>& fbo_out) {
  const std::size_t n_q = short_term.value().rows();
  if (fbo_out.value().rows() == n_q) {
    return concat_cols(tape, short_term, fbo_out);
  }
  if (fbo_out.value().rows() == 1) {
    return concat_cols(tape, short_term, broadcast_rows(tape, fbo_out, n_q));
  }
  throw ShapeError("assemble_head_input: operator output rows " +
                   std::to_string(fbo_out.value().rows()) +
                   " incompatible with " + std::to_string(n_q) +
                   " short-term rows");
}

}  // namespace lfb
