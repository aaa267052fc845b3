#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lfb/fbo.hpp"
#include "lfb/grad_check.hpp"
#include "lfb/ops.hpp"
#include "lfb/training.hpp"

namespace lfb {

/// Outcome of one named analytic-vs-numeric gradient comparison. `rel_err`
/// is the worst relative error over every differentiable input of the op.
struct GradCheckResult {
  std::string name;
  double rel_err = 0.0;
  bool pass = false;
};

namespace detail {

/// Runs one check: `build` records a scalar loss from the given parameters;
/// the analytic gradient from one backward pass is compared against central
/// differences for each parameter in turn. `build` must be deterministic
/// across calls (seed any rng it uses inside).
inline GradCheckResult run_gradient_case(
    const std::string& name, std::vector<Tensor> init,
    const std::function<Var(Tape&, std::vector<Parameter>&)>& build) {
  std::vector<Parameter> params;
  params.reserve(init.size());
  for (Tensor& t : init) params.emplace_back(std::move(t));

  const auto forward = [&]() {
    Tape tape;
    Var loss = build(tape, params);
    if (loss.value().size() != 1) {
      throw ShapeError("gradient case '" + name + "' must produce a scalar");
    }
    return std::pair<Tape, Var>(std::move(tape), std::move(loss));
  };

  auto [tape, loss] = forward();
  loss.grad().at(0) = 1.0;
  tape.run_backward();

  double worst = 0.0;
  for (Parameter& p : params) {
    const Tensor analytic = p.grad();
    const Tensor base = p.value();
    const Tensor numeric = finite_diff_grad<double>(
        [&](const Tensor& probe) {
          p.value() = probe;
          auto [probe_tape, probe_loss] = forward();
          probe_tape.clear();
          return probe_loss.value().at(0);
        },
        base);
    p.value() = base;
    worst = std::max(worst, gradient_rel_err(analytic, numeric));
  }
  return {name, worst, worst < kGradCheckTol};
}

/// Gaussian draw with |x| >= floor, for ops with kinks (relu, max) where a
/// finite-difference probe must not cross the non-smooth point.
inline Tensor away_from_kinks(Shape shape, RngStream& rng, double floor) {
  Tensor t(shape);
  fill_gaussian(t, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t.at(i);
    t.at(i) = v >= 0 ? v + floor : v - floor;
  }
  return t;
}

inline Tensor gaussian(Shape shape, RngStream& rng, double sigma = 1.0) {
  Tensor t(shape);
  fill_gaussian(t, rng, 0.0, sigma);
  return t;
}

}  // namespace detail

/// Gradient checks for every taped operation plus composite paths (a full
/// default attention stack with dropout, both losses). All randomness is
/// derived from `seed`, so a given seed is exactly reproducible.
inline std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed) {
  using detail::away_from_kinks;
  using detail::gaussian;
  using detail::run_gradient_case;

  RngStream rng(seed, RngUse::kData);
  std::vector<GradCheckResult> results;
  const auto probe = [&](const std::string& name, std::vector<Tensor> init,
                         std::function<Var(Tape&, std::vector<Parameter>&)>
                             build) {
    results.push_back(run_gradient_case(name, std::move(init), build));
  };

  // A fixed weighting turns any matrix output into a well-conditioned
  // scalar without flattening gradient structure.
  const auto weighted = [](Tape& tape, const Var& y, const Tensor& w) {
    return sum_all(tape, mul(tape, y, constant(w)));
  };

  {
    const Tensor wa = gaussian(Shape{3, 5}, rng);
    probe("matmul",
          {gaussian(Shape{3, 4}, rng), gaussian(Shape{4, 5}, rng)},
          [wa, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, matmul(t, p[0], p[1]), wa);
          });
  }
  {
    const Tensor w = gaussian(Shape{4, 3}, rng);
    probe("transpose", {gaussian(Shape{3, 4}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, transpose(t, p[0]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{3, 5}, rng);
    probe("softmax_rows", {gaussian(Shape{3, 5}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, softmax_rows(t, p[0]), w);
          });
    probe("softmax_rows_masked", {gaussian(Shape{3, 5}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(
                t, softmax_rows(t, p[0], tile_key_mask(Mask{1, 0, 1, 1, 0}, 3)),
                w);
          });
  }
  {
    const Tensor w = gaussian(Shape{4, 6}, rng);
    probe("layer_norm",
          {gaussian(Shape{4, 6}, rng), gaussian(Shape{6}, rng),
           gaussian(Shape{6}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, layer_norm(t, p[0], p[1], p[2]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{3, 4}, rng);
    probe("linear",
          {gaussian(Shape{3, 5}, rng), gaussian(Shape{5, 4}, rng),
           gaussian(Shape{4}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, linear(t, p[0], p[1], p[2]), w);
          });
    probe("linear_no_bias",
          {gaussian(Shape{3, 5}, rng), gaussian(Shape{5, 4}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, linear(t, p[0], p[1]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{4, 4}, rng);
    probe("relu", {away_from_kinks(Shape{4, 4}, rng, 0.05)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, relu(t, p[0]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{4, 6}, rng);
    const std::uint64_t mask_seed = rng.next_below(1u << 20);
    probe("dropout_training", {gaussian(Shape{4, 6}, rng)},
          [w, &weighted, mask_seed](Tape& t, std::vector<Parameter>& p) {
            RngStream drop(mask_seed, RngUse::kDropout);
            return weighted(t, dropout(t, p[0], 0.4, drop, true), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{3, 3}, rng);
    probe("scale", {gaussian(Shape{3, 3}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, scale(t, p[0], -1.75), w);
          });
    probe("add", {gaussian(Shape{3, 3}, rng), gaussian(Shape{3, 3}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, add(t, p[0], p[1]), w);
          });
    probe("mul", {gaussian(Shape{3, 3}, rng), gaussian(Shape{3, 3}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, mul(t, p[0], p[1]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{3, 7}, rng);
    probe("concat_cols",
          {gaussian(Shape{3, 4}, rng), gaussian(Shape{3, 3}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, concat_cols(t, p[0], p[1]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{7, 3}, rng);
    probe("concat_rows",
          {gaussian(Shape{4, 3}, rng), gaussian(Shape{3, 3}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, concat_rows(t, p[0], p[1]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{4, 5}, rng);
    probe("outer_sum",
          {gaussian(Shape{4, 1}, rng), gaussian(Shape{5, 1}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, outer_sum(t, p[0], p[1]), w);
          });
  }
  {
    const Tensor w = gaussian(Shape{3, 5}, rng);
    probe("mask_zero_cols", {gaussian(Shape{3, 5}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, mask_zero_cols(t, p[0], Mask{1, 1, 0, 1, 0}),
                            w);
          });
  }
  {
    const Tensor w = gaussian(Shape{5, 4}, rng);
    probe("broadcast_rows", {gaussian(Shape{1, 4}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, broadcast_rows(t, p[0], 5), w);
          });
  }
  probe("sum_all", {gaussian(Shape{3, 4}, rng)},
        [](Tape& t, std::vector<Parameter>& p) { return sum_all(t, p[0]); });
  probe("mean_all", {gaussian(Shape{3, 4}, rng)},
        [](Tape& t, std::vector<Parameter>& p) { return mean_all(t, p[0]); });
  {
    const Tensor w = gaussian(Shape{1, 4}, rng);
    probe("mean_rows", {gaussian(Shape{5, 4}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, mean_rows(t, p[0]), w);
          });
    probe("mean_rows_masked", {gaussian(Shape{5, 4}, rng)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, mean_rows(t, p[0], Mask{1, 0, 1, 1, 0}), w);
          });
    probe("max_rows", {away_from_kinks(Shape{5, 4}, rng, 0.0)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, max_rows(t, p[0]), w);
          });
    probe("max_rows_masked", {away_from_kinks(Shape{5, 4}, rng, 0.0)},
          [w, &weighted](Tape& t, std::vector<Parameter>& p) {
            return weighted(t, max_rows(t, p[0], Mask{0, 1, 1, 0, 1}), w);
          });
  }

  // Attention blocks: one check per variant and activation order, plus the
  // full default stack (two layers, dropout active) through the reduction.
  const auto stack_case = [&](const std::string& name, FboConfig cfg,
                              bool with_mask) {
    const std::size_t d_in = 6;
    RngStream init(seed ^ 0x5eedULL, RngUse::kInit);
    const FboStackT<double> stack = init_fbo_stack<double>(d_in, cfg, init);
    std::vector<Tensor> inputs = {gaussian(Shape{3, d_in}, rng),
                                  gaussian(Shape{5, d_in}, rng)};
    const Tensor w = gaussian(Shape{3, cfg.d_f}, rng);
    const Mask mask = with_mask ? Mask{1, 1, 0, 1, 1} : Mask{};
    const std::uint64_t mask_seed = rng.next_below(1u << 20);

    // Check gradients into the data inputs; stack weights flow through the
    // same recorded ops, so input coverage exercises every backward closure.
    results.push_back(run_gradient_case(
        name, std::move(inputs),
        [&, w, cfg, stack, mask, mask_seed](Tape& t,
                                            std::vector<Parameter>& p) {
          RngStream drop(mask_seed, RngUse::kDropout);
          const Var out =
              fbo_nl(t, p[0], p[1], mask.empty() ? nullptr : &mask, stack,
                     cfg, drop, true);
          return sum_all(t, mul(t, out, constant(w)));
        }));
  };

  {
    FboConfig cfg;
    cfg.d_f = 4;
    cfg.layers = 1;
    cfg.dropout_rate = 0.0;
    cfg.variant = NlVariant::kEmbeddedGaussian;
    stack_case("fbo_embedded_gaussian", cfg, false);
    cfg.variant = NlVariant::kDotProduct;
    stack_case("fbo_dot_product", cfg, false);
    cfg.variant = NlVariant::kConcat;
    stack_case("fbo_concat", cfg, false);
    cfg.variant = NlVariant::kEmbeddedGaussian;
    cfg.activation = ActivationOrder::kPost;
    stack_case("fbo_post_activation", cfg, false);
  }
  {
    FboConfig cfg;  // defaults: 2 layers, pre-activation, dropout 0.2
    cfg.d_f = 4;
    stack_case("fbo_default_stack_dropout", cfg, true);
  }

  {
    const Tensor targets = [&] {
      Tensor t(Shape{2, 4});
      RngStream tr(seed ^ 0x7e57ULL, RngUse::kData);
      for (std::size_t i = 0; i < t.size(); ++i) {
        t.at(i) = tr.next_below(2) ? 1.0 : 0.0;
      }
      return t;
    }();
    probe("bce_multilabel_loss", {gaussian(Shape{2, 4}, rng)},
          [targets](Tape& t, std::vector<Parameter>& p) {
            return bce_multilabel_loss(t, p[0], targets);
          });
  }
  probe("ce_loss", {gaussian(Shape{3, 5}, rng)},
        [](Tape& t, std::vector<Parameter>& p) {
          return ce_loss(t, p[0], {2, 0, 4});
        });

  return results;
}

inline bool all_gradient_checks_pass(
    const std::vector<GradCheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return !results.empty();
}

}  // namespace lfb
