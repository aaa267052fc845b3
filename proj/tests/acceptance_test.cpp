// Release gate for the library: ten end-to-end checks, one verdict line each.
//
// Wherever a numeric result is being verified, the expected value comes from
// an independent source: plain-loop reference implementations, finite
// differences, hand-counted fixtures, or exhaustive enumeration. The library
// under test never supplies its own oracle. The binary exits nonzero when
// any check fails, so it can gate a release from ctest or a shell script.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lfb/bank_io.hpp"
#include "lfb/eval.hpp"
#include "lfb/fbo.hpp"
#include "lfb/feature_bank.hpp"
#include "lfb/gradcheck_suite.hpp"
#include "lfb/model.hpp"
#include "lfb/ops.hpp"
#include "lfb/rng.hpp"
#include "lfb/roi.hpp"
#include "lfb/synthetic.hpp"
#include "lfb/tensor.hpp"
#include "lfb/trainer.hpp"
#include "lfb/training.hpp"

namespace {

using lfb::Tensor;
using lfb::Shape;
using lfb::Mask;
using Grid = std::vector<std::vector<double>>;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Plain-loop linear algebra for the reference computations.
// ---------------------------------------------------------------------------

Grid grid_of(const Tensor& t) {
  Grid g(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) g[i][j] = t.at(i, j);
  }
  return g;
}

std::vector<double> vec_of(const Tensor& t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = t.at(i);
  return v;
}

Grid mat_mul(const Grid& a, const Grid& b) {
  const std::size_t m = a.size(), k = b.size(), n = b.empty() ? 0 : b[0].size();
  Grid c(m, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][p] * b[p][j];
    }
  }
  return c;
}

/// a * transpose(b), with b given row-major.
Grid mat_mul_nt(const Grid& a, const Grid& b) {
  const std::size_t m = a.size(), n = b.size();
  const std::size_t k = a.empty() ? 0 : a[0].size();
  Grid c(m, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) c[i][j] += a[i][p] * b[j][p];
    }
  }
  return c;
}

double max_abs_diff(const Grid& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      worst = std::max(worst, std::abs(a[i][j] - b.at(i, j)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Check 1: finite-difference gradient suite.
// ---------------------------------------------------------------------------

Verdict check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checks = 0;
  double worst = 0.0;
  bool all_pass = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto results = lfb::run_gradient_checks(seed);
    checks = results.size();
    for (const auto& r : results) {
      worst = std::max(worst, r.rel_err);
      all_pass = all_pass && r.pass;
    }
  }
  const double dt = seconds_since(t0);
  const bool in_budget = dt < 60.0;
  return {all_pass && in_budget,
          fmt("gradients: %zu finite-difference checks x 20 seeds, max rel "
              "err %.2e (tol 1e-4), %.1fs (budget 60s)",
              checks, worst, dt)};
}

// ---------------------------------------------------------------------------
// Check 2: attention block against a brute-force reference; pooling exact.
// ---------------------------------------------------------------------------

struct RefBlockParams {
  Grid theta, phi, g, out_w;
  std::vector<double> out_b, ln_g, ln_b;
  Grid score_q, score_k;
};

RefBlockParams ref_params(const lfb::NlBlockParamsT<double>& p) {
  RefBlockParams r;
  r.theta = grid_of(p.w_theta.value());
  r.phi = grid_of(p.w_phi.value());
  r.g = grid_of(p.w_g.value());
  r.out_w = grid_of(p.w_out.value());
  r.out_b = vec_of(p.b_out.value());
  r.ln_g = vec_of(p.ln_gamma.value());
  r.ln_b = vec_of(p.ln_beta.value());
  r.score_q = grid_of(p.w_score_q.value());
  r.score_k = grid_of(p.w_score_k.value());
  return r;
}

Grid ref_layer_norm(const Grid& x, const std::vector<double>& gamma,
                    const std::vector<double>& beta) {
  Grid y = x;
  const double eps = 1e-5;
  for (auto& row : y) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = gamma[j] * (row[j] - mean) * inv + beta[j];
    }
  }
  return y;
}

/// Mirror of the modified non-local block in evaluation mode, written with
/// nothing but loops over std::vector.
Grid ref_nl_block(const Grid& q, const Grid& kv, const Mask& mask,
                  const RefBlockParams& p, const lfb::FboConfig& cfg) {
  const std::size_t n_k = kv.size();
  std::size_t visible = 0;
  for (std::size_t j = 0; j < n_k; ++j) {
    if (mask.empty() || mask[j]) ++visible;
  }
  if (visible == 0) return q;

  const std::size_t d_f = cfg.d_f;
  const Grid qp = mat_mul(q, p.theta);
  const Grid kp = mat_mul(kv, p.phi);
  const Grid vp = mat_mul(kv, p.g);

  Grid attn(q.size(), std::vector<double>(n_k, 0.0));
  const double scale =
      cfg.use_scale ? 1.0 / std::sqrt(static_cast<double>(d_f)) : 1.0;
  switch (cfg.variant) {
    case lfb::NlVariant::kEmbeddedGaussian: {
      const Grid logits = mat_mul_nt(qp, kp);
      for (std::size_t i = 0; i < q.size(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n_k; ++j) {
          if (mask.empty() || mask[j]) {
            row_max = std::max(row_max, logits[i][j] * scale);
          }
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n_k; ++j) {
          if (mask.empty() || mask[j]) {
            attn[i][j] = std::exp(logits[i][j] * scale - row_max);
            sum += attn[i][j];
          }
        }
        for (std::size_t j = 0; j < n_k; ++j) attn[i][j] /= sum;
      }
      break;
    }
    case lfb::NlVariant::kDotProduct: {
      const Grid logits = mat_mul_nt(qp, kp);
      for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t j = 0; j < n_k; ++j) {
          if (mask.empty() || mask[j]) {
            attn[i][j] =
                logits[i][j] * scale / static_cast<double>(visible);
          }
        }
      }
      break;
    }
    case lfb::NlVariant::kConcat: {
      const Grid u = mat_mul(qp, p.score_q);
      const Grid v = mat_mul(kp, p.score_k);
      for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t j = 0; j < n_k; ++j) {
          if (mask.empty() || mask[j]) {
            attn[i][j] = std::max(0.0, u[i][0] + v[j][0]) /
                         static_cast<double>(visible);
          }
        }
      }
      break;
    }
  }

  Grid h = mat_mul(attn, vp);
  if (cfg.activation == lfb::ActivationOrder::kPre) {
    if (cfg.use_ln) h = ref_layer_norm(h, p.ln_g, p.ln_b);
    for (auto& row : h) {
      for (double& v : row) v = std::max(0.0, v);
    }
    h = mat_mul(h, p.out_w);
    Grid out = q;
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t j = 0; j < d_f; ++j) {
        out[i][j] += h[i][j] + p.out_b[j];
      }
    }
    return out;
  }
  h = mat_mul(h, p.out_w);
  for (auto& row : h) {
    for (std::size_t j = 0; j < d_f; ++j) row[j] += p.out_b[j];
  }
  if (cfg.use_ln) h = ref_layer_norm(h, p.ln_g, p.ln_b);
  Grid out = q;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < d_f; ++j) {
      out[i][j] = std::max(0.0, out[i][j] + h[i][j]);
    }
  }
  return out;
}

Verdict check_attention_oracle() {
  lfb::RngStream rng(2024, lfb::RngUse::kSynthetic);
  lfb::RngStream drop(0, lfb::RngUse::kDropout);
  double worst_block = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    lfb::FboConfig cfg;
    cfg.variant = static_cast<lfb::NlVariant>(i % 3);
    cfg.activation = (i / 3) % 2 == 0 ? lfb::ActivationOrder::kPre
                                      : lfb::ActivationOrder::kPost;
    cfg.use_scale = (i % 5) != 0;
    cfg.use_ln = (i % 7) != 0;
    cfg.d_f = 2 + i % 5;
    const std::size_t n_q = 1 + i % 3;
    const std::size_t n_k = 1 + i % 5;

    auto params = lfb::init_nl_block<double>(cfg.d_f, rng);
    Tensor q(Shape{n_q, cfg.d_f}), kv(Shape{n_k, cfg.d_f});
    lfb::fill_gaussian(q, rng, 0.0, 1.0);
    lfb::fill_gaussian(kv, rng, 0.0, 1.0);
    Mask mask;
    if (i % 4 != 0) {
      mask.resize(n_k);
      for (auto& b : mask) b = rng.next_below(4) != 0 ? 1 : 0;
      if (i % 11 == 0) std::fill(mask.begin(), mask.end(), 0);
    }

    lfb::TapeT<double> tape;
    const auto out = lfb::nl_block(tape, lfb::constant(q), lfb::constant(kv),
                                   mask.empty() ? nullptr : &mask, params, cfg,
                                   drop, false);
    const Grid want =
        ref_nl_block(grid_of(q), grid_of(kv), mask, ref_params(params), cfg);
    worst_block = std::max(worst_block, max_abs_diff(want, out.value()));
    tape.clear();
  }

  // Pooling must agree with a directly computed masked mean / max bit for bit.
  bool pool_exact = true;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t n = i % 7;  // includes empty inputs
    const std::size_t d = 2 + i % 4;
    Tensor rows(Shape{n, d});
    lfb::fill_gaussian(rows, rng, 0.0, 2.0);
    Mask mask;
    if (i % 3 != 0) {
      mask.resize(n);
      for (auto& b : mask) b = rng.next_below(3) != 0 ? 1 : 0;
    }
    const Mask* mp = mask.empty() ? nullptr : &mask;
    const Tensor avg = lfb::fbo_pool(rows, mp, lfb::PoolKind::kAvg);
    const Tensor mx = lfb::fbo_pool(rows, mp, lfb::PoolKind::kMax);
    std::vector<double> want_avg(d, 0.0), want_max(d, 0.0);
    std::size_t visible = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (mp && !mask[r]) continue;
      ++visible;
      for (std::size_t j = 0; j < d; ++j) {
        want_avg[j] += rows.at(r, j);
        want_max[j] = visible == 1 ? rows.at(r, j)
                                   : std::max(want_max[j], rows.at(r, j));
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double a = visible == 0 ? 0.0 : want_avg[j] / double(visible);
      const double m = visible == 0 ? 0.0 : want_max[j];
      pool_exact = pool_exact && avg.at(0, j) == a && mx.at(0, j) == m;
    }
  }

  return {worst_block < 1e-10 && pool_exact,
          fmt("attention: 200 instances (3 variants x pre/post), max |diff| "
              "%.2e (tol 1e-10); pooling exact over 200 cases: %s",
              worst_block, pool_exact ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// Check 3: causal windows ignore the future exactly.
// ---------------------------------------------------------------------------

Verdict check_causality() {
  lfb::RngStream rng(7, lfb::RngUse::kSynthetic);
  lfb::RngStream drop(0, lfb::RngUse::kDropout);
  lfb::FboConfig cfg;
  cfg.d_f = 4;
  cfg.layers = 1;
  cfg.dropout_rate = 0.0;
  double worst = 0.0;
  bool windows_equal = true;
  for (std::size_t trial = 0; trial < 100; ++trial) {
    const std::size_t steps = 8 + rng.next_below(13);
    const std::size_t d = 3 + rng.next_below(6);
    const std::size_t t = rng.next_below(steps - 1);  // leave future to edit
    const lfb::WindowSpec spec{1 + rng.next_below(4),
                               lfb::WindowMode::kCausal};

    lfb::FeatureBank past(d), tampered(d);
    for (std::size_t s = 0; s < steps; ++s) {
      Tensor step_rows(Shape{rng.next_below(4), d});
      lfb::fill_gaussian(step_rows, rng, 0.0, 1.0);
      past.append_step(step_rows);
      if (s <= t) {
        tampered.append_step(step_rows);
      } else {
        Tensor other(Shape{rng.next_below(4), d});
        lfb::fill_gaussian(other, rng, 0.5, 2.0);
        tampered.append_step(other);
      }
    }

    const auto wa = past.window(t, spec);
    const auto wb = tampered.window(t, spec);
    windows_equal = windows_equal && wa.provenance == wb.provenance &&
                    wa.rows.rows() == wb.rows.rows();
    for (std::size_t i = 0; windows_equal && i < wa.rows.size(); ++i) {
      windows_equal = wa.rows.at(i) == wb.rows.at(i);
    }

    const auto stack = lfb::init_fbo_stack<double>(d, cfg, rng);
    Tensor clip(Shape{2, d});
    lfb::fill_gaussian(clip, rng, 0.0, 1.0);
    lfb::TapeT<double> tape;
    const auto oa = lfb::fbo_nl(tape, lfb::constant(clip),
                                lfb::constant(wa.rows), nullptr, stack, cfg,
                                drop, false);
    const auto ob = lfb::fbo_nl(tape, lfb::constant(clip),
                                lfb::constant(wb.rows), nullptr, stack, cfg,
                                drop, false);
    for (std::size_t i = 0; i < oa.value().size(); ++i) {
      worst = std::max(worst, std::abs(oa.value().at(i) - ob.value().at(i)));
    }
    tape.clear();
  }
  return {windows_equal && worst == 0.0,
          fmt("causality: 100 banks with rewritten futures, window rows "
              "identical: %s, max operator drift %.1e (must be 0)",
              windows_equal ? "yes" : "no", worst)};
}

// ---------------------------------------------------------------------------
// Check 4: padded + masked batches equal per-sample unpadded computation.
// ---------------------------------------------------------------------------

Verdict check_padding_equivalence() {
  lfb::RngStream rng(11, lfb::RngUse::kSynthetic);
  lfb::RngStream drop(0, lfb::RngUse::kDropout);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < 100; ++trial) {
    const std::size_t d = 4 + trial % 5;
    lfb::FboConfig cfg;
    cfg.variant = static_cast<lfb::NlVariant>(trial % 3);
    cfg.activation = (trial / 3) % 2 == 0 ? lfb::ActivationOrder::kPre
                                          : lfb::ActivationOrder::kPost;
    cfg.d_f = 3;
    cfg.layers = 1 + trial % 2;
    const auto stack = lfb::init_fbo_stack<double>(d, cfg, rng);

    const std::size_t batch = 2 + rng.next_below(4);
    std::vector<lfb::WindowedFeatures> windows(batch);
    for (auto& w : windows) {
      Tensor rows(Shape{rng.next_below(7), d});
      lfb::fill_gaussian(rows, rng, 0.0, 1.0);
      w.rows = rows;
    }
    std::optional<std::size_t> pad_to;
    if (trial % 2 == 1) {
      std::size_t max_rows = 0;
      for (const auto& w : windows) {
        max_rows = std::max(max_rows, w.rows.rows());
      }
      pad_to = max_rows + 2;
    }
    const auto padded = lfb::pad_and_mask(windows, pad_to);

    for (std::size_t b = 0; b < batch; ++b) {
      Tensor clip(Shape{1 + rng.next_below(3), d});
      lfb::fill_gaussian(clip, rng, 0.0, 1.0);

      Tensor padded_rows(Shape{padded.padded_rows, d});
      Mask key_mask(padded.padded_rows);
      for (std::size_t i = 0; i < padded.padded_rows; ++i) {
        key_mask[i] = padded.mask[b * padded.padded_rows + i];
        for (std::size_t j = 0; j < d; ++j) {
          padded_rows.at(i, j) = padded.features.at(b, i, j);
        }
      }

      lfb::TapeT<double> tape;
      const auto batched =
          lfb::fbo_nl(tape, lfb::constant(clip), lfb::constant(padded_rows),
                      &key_mask, stack, cfg, drop, false);
      const auto solo =
          lfb::fbo_nl(tape, lfb::constant(clip),
                      lfb::constant(windows[b].rows), nullptr, stack, cfg,
                      drop, false);
      for (std::size_t i = 0; i < batched.value().size(); ++i) {
        worst = std::max(
            worst, std::abs(batched.value().at(i) - solo.value().at(i)));
      }
      tape.clear();
    }
  }
  return {worst < 1e-6,
          fmt("padding: 100 batches, padded-masked vs unpadded max |diff| "
              "%.2e (tol 1e-6)",
              worst)};
}

// ---------------------------------------------------------------------------
// Check 5: production-scale width and backbone geometry contracts.
// ---------------------------------------------------------------------------

Verdict check_shape_contract() {
  lfb::ModelConfig nl_cfg;
  nl_cfg.d_in = 2048;
  nl_cfg.d_model = 2048;
  nl_cfg.num_classes = 10;
  nl_cfg.fbo = lfb::FboKind::kNl;
  nl_cfg.fbo_cfg.d_f = 512;
  lfb::RngStream rng(1, lfb::RngUse::kInit);
  const auto nl_model = lfb::LfbModel::init(nl_cfg, rng);

  lfb::ModelConfig pool_cfg = nl_cfg;
  pool_cfg.fbo = lfb::FboKind::kAvg;
  const auto pool_model = lfb::LfbModel::init(pool_cfg, rng);

  auto head_rows = [](const lfb::LfbModel& m) -> std::size_t {
    for (const auto& np : m.parameters()) {
      if (np.name == "head.w") return np.param.value().rows();
    }
    return 0;
  };

  const std::size_t nl_width = head_rows(nl_model);
  const std::size_t pool_width = head_rows(pool_model);
  const Shape volume = lfb::backbone_output_shape(32, 224, 224);
  const bool volume_ok = volume == Shape{16, 14, 14, 2048};
  const bool ok = nl_width == 2560 && nl_model.head_width() == 2560 &&
                  pool_width == 4096 && pool_model.head_width() == 4096 &&
                  volume_ok;
  return {ok,
          fmt("shapes: attention head input %zu (want 2560), pooled head "
              "input %zu (want 4096), 32x224x224 backbone volume "
              "%zux%zux%zux%zu (want 16x14x14x2048)",
              nl_width, pool_width, volume[0], volume[1], volume[2],
              volume[3])};
}

// ---------------------------------------------------------------------------
// Check 6: long-range synthetic task.
// ---------------------------------------------------------------------------

double train_once(const lfb::SyntheticDataset& data, lfb::FboKind kind,
                  std::size_t half_window, std::uint64_t seed) {
  lfb::ModelConfig mc;
  mc.d_in = data.spec.dim;
  mc.d_model = 32;
  mc.num_classes = data.spec.num_classes;
  mc.fbo = kind;
  mc.fbo_cfg.d_f = 16;
  mc.fbo_cfg.layers = 1;
  mc.fbo_cfg.dropout_rate = 0.0;
  mc.num_distractors = 8;

  lfb::TrainOptions opts;
  opts.iterations = 2000;
  opts.batch_size = 8;
  opts.schedule = {0.01, {{1600, 0.1}}, 2000};
  opts.weight_decay = 1e-4;
  opts.momentum = 0.9;
  opts.window = {half_window, lfb::WindowMode::kCausal};
  opts.eval_every = 2000;
  opts.seed = seed;

  lfb::RngStream init(seed, lfb::RngUse::kInit);
  auto model = lfb::LfbModel::init(mc, init);
  return lfb::train_model(model, data, opts).test_top1;
}

Verdict check_long_range_task() {
  const auto t0 = std::chrono::steady_clock::now();
  lfb::SyntheticSpec spec;  // cue 20 steps before the label, clip sees 4
  spec.train_episodes = 1000;
  spec.test_episodes = 1000;
  const auto data = lfb::generate_synthetic<double>(spec, 99);

  const std::vector<std::size_t> windows = {1, 2, 5, 10, 12};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<double> mean_acc(windows.size(), 0.0);
  bool big_window_high = true;
  bool baselines_low = true;
  double none_mean = 0.0, sto_mean = 0.0;
  for (const std::uint64_t seed : seeds) {
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
      const double acc =
          train_once(data, lfb::FboKind::kNl, windows[wi], seed);
      mean_acc[wi] += acc / double(seeds.size());
      // Half-window 10 in causal mode reaches 20 steps back: exactly the
      // cue distance. That window and anything larger must solve the task.
      if (2 * windows[wi] >= spec.signal_offset) {
        big_window_high = big_window_high && acc >= 0.95;
      }
    }
    const double none_acc = train_once(data, lfb::FboKind::kNone, 10, seed);
    const double sto_acc = train_once(data, lfb::FboKind::kSto, 10, seed);
    none_mean += none_acc / double(seeds.size());
    sto_mean += sto_acc / double(seeds.size());
    baselines_low = baselines_low && none_acc <= 0.60 && sto_acc <= 0.60;
  }

  bool monotone = true;
  for (std::size_t wi = 1; wi < windows.size(); ++wi) {
    monotone = monotone && mean_acc[wi] >= mean_acc[wi - 1] - 0.02;
  }
  const double dt = seconds_since(t0);
  const bool ok =
      big_window_high && baselines_low && monotone && dt < 600.0;
  return {ok,
          fmt("long-range: mean top1 by half-window "
              "{1:%.3f 2:%.3f 5:%.3f 10:%.3f 12:%.3f}, no-bank %.3f, "
              "short-term %.3f, monotone %s, 3 seeds in %.0fs (budget 600s)",
              mean_acc[0], mean_acc[1], mean_acc[2], mean_acc[3], mean_acc[4],
              none_mean, sto_mean, monotone ? "yes" : "no", dt)};
}

// ---------------------------------------------------------------------------
// Check 7: average precision against an exhaustive reference.
// ---------------------------------------------------------------------------

/// Independent AP: rank, greedy-match, then integrate using an O(n^2)
/// "best precision at or after each rank" scan instead of the envelope pass.
double ref_frame_ap(const std::vector<lfb::FrameRecord>& records,
                    int class_id, double thr) {
  struct Det {
    double score;
    std::int64_t frame;
    std::size_t rec, idx;
  };
  std::vector<Det> dets;
  std::size_t total_gt = 0;
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t d = 0; d < records[r].detections.size(); ++d) {
      if (records[r].detections[d].class_id == class_id) {
        dets.push_back({records[r].detections[d].score, records[r].frame_id,
                        r, d});
      }
    }
    for (const auto& g : records[r].ground_truth) {
      if (g.class_id == class_id) ++total_gt;
    }
  }
  if (total_gt == 0) return 0.0;
  std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.idx < b.idx;
  });

  std::vector<std::vector<bool>> used(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    used[r].assign(records[r].ground_truth.size(), false);
  }
  std::vector<bool> correct(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& rec = records[dets[i].rec];
    double best = 0.0;
    std::size_t best_g = rec.ground_truth.size();
    for (std::size_t g = 0; g < rec.ground_truth.size(); ++g) {
      if (rec.ground_truth[g].class_id != class_id || used[dets[i].rec][g]) {
        continue;
      }
      const double v =
          lfb::iou(rec.detections[dets[i].idx].box, rec.ground_truth[g].box);
      if (v >= thr && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < rec.ground_truth.size()) {
      used[dets[i].rec][best_g] = true;
      correct[i] = true;
    }
  }

  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!correct[i]) continue;
    ++tp;
    // Best precision achievable at this recall level or beyond.
    double best_prec = 0.0;
    std::size_t tp_j = tp;
    for (std::size_t j = i; j < dets.size(); ++j) {
      if (j > i && correct[j]) ++tp_j;
      best_prec = std::max(best_prec, double(tp_j) / double(j + 1));
    }
    ap += best_prec / double(total_gt);
  }
  return ap;
}

lfb::Box random_box(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> corner(0.0, 8.0);
  std::uniform_real_distribution<double> extent(0.5, 4.0);
  const double x1 = corner(gen), y1 = corner(gen);
  return {x1, y1, x1 + extent(gen), y1 + extent(gen)};
}

Verdict check_average_precision() {
  std::mt19937_64 gen(424242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 1 + gen() % 4;
    std::vector<lfb::FrameRecord> records(frames);
    std::size_t dets_left = 10, gts_left = 5;
    for (std::size_t f = 0; f < frames; ++f) {
      records[f].frame_id = static_cast<std::int64_t>(f);
      const std::size_t n_d = std::min<std::size_t>(gen() % 4, dets_left);
      const std::size_t n_g = std::min<std::size_t>(gen() % 3, gts_left);
      dets_left -= n_d;
      gts_left -= n_g;
      for (std::size_t i = 0; i < n_d; ++i) {
        records[f].detections.push_back(
            {random_box(gen), static_cast<int>(gen() % 2), unit(gen)});
      }
      for (std::size_t i = 0; i < n_g; ++i) {
        lfb::Box b = random_box(gen);
        // Half the ground truth sits close to some detection so matches
        // at the 0.5 threshold actually occur.
        if (i % 2 == 0 && !records[f].detections.empty()) {
          b = records[f].detections[i % records[f].detections.size()].box;
          b.x1 += 0.1;
          b.x2 += 0.1;
        }
        records[f].ground_truth.push_back(
            {b, static_cast<int>(gen() % 2)});
      }
    }
    for (int c = 0; c < 2; ++c) {
      const double got = lfb::frame_ap(records, c, 0.5);
      const double want = ref_frame_ap(records, c, 0.5);
      worst = std::max(worst, std::abs(got - want));
    }
  }

  const lfb::Box a{0.0, 0.0, 1.0, 1.0};
  const lfb::Box b{0.5, 0.0, 1.5, 1.0};
  const double overlap = lfb::iou(a, b);
  const bool iou_ok = std::abs(overlap - 1.0 / 3.0) <= 1e-15;
  return {worst <= 1e-12 && iou_ok,
          fmt("average precision: 50 detection sets x 2 classes, max |diff| "
              "vs exhaustive reference %.2e (tol 1e-12); half-offset unit "
              "squares iou %.17g (want 1/3)",
              worst, overlap)};
}

// ---------------------------------------------------------------------------
// Check 8: verb-noun prior normalization and hand-counted ranking.
// ---------------------------------------------------------------------------

Verdict check_prior_table() {
  lfb::PriorTable tiny;
  tiny.add("cut", "lemon", 3);
  tiny.add("squeeze", "lemon", 1);
  const std::size_t cut = 0, squeeze = 1, lemon = 0;
  const bool mu_ok =
      tiny.mu(cut, lemon) == 0.75 && tiny.mu(squeeze, lemon) == 0.25;
  const auto scored = lfb::action_scores(tiny, {0.5, 0.5}, {1.0});
  const bool ranked = scored.size() == 2 &&
                      tiny.verb_name(scored[0].verb_id) == "cut" &&
                      tiny.noun_name(scored[0].noun_id) == "lemon" &&
                      std::abs(scored[0].score - 0.75) <= 1e-15 &&
                      tiny.verb_name(scored[1].verb_id) == "squeeze" &&
                      std::abs(scored[1].score - 0.25) <= 1e-15;

  // Random table: conditional verb mass must sum to one for every noun.
  lfb::PriorTable big;
  std::mt19937_64 gen(99);
  const std::size_t n_verbs = 12, n_nouns = 9;
  for (std::size_t v = 0; v < n_verbs; ++v) {
    for (std::size_t n = 0; n < n_nouns; ++n) {
      const std::uint64_t count = gen() % 20;
      if (count > 0 || v == n % n_verbs) {
        big.add("v" + std::to_string(v), "n" + std::to_string(n),
                std::max<std::uint64_t>(count, 1));
      }
    }
  }
  double worst_sum_err = 0.0;
  for (std::size_t n = 0; n < big.num_nouns(); ++n) {
    double sum = 0.0;
    for (std::size_t v = 0; v < big.num_verbs(); ++v) sum += big.mu(v, n);
    worst_sum_err = std::max(worst_sum_err, std::abs(sum - 1.0));
  }

  return {mu_ok && ranked && worst_sum_err <= 1e-12,
          fmt("prior: mu(cut|lemon)=%.2f mu(squeeze|lemon)=%.2f, top action "
              "(cut,lemon): %s; sum_v mu(v,n) off by at most %.1e over %zu "
              "nouns",
              tiny.mu(cut, lemon), tiny.mu(squeeze, lemon),
              ranked ? "yes" : "no", worst_sum_err, big.num_nouns())};
}

// ---------------------------------------------------------------------------
// Check 9: learning-rate presets hit their published values.
// ---------------------------------------------------------------------------

Verdict check_schedules() {
  struct Fixture {
    const char* preset;
    std::size_t iter;
    double lr;
  };
  const Fixture fixtures[] = {
      {"ava-140k", 0, 0.04},          {"ava-140k", 99999, 0.04},
      {"ava-140k", 100000, 0.004},    {"ava-140k", 119999, 0.004},
      {"ava-140k", 120000, 0.0004},   {"charades-24k", 0, 0.02},
      {"charades-24k", 19999, 0.02},  {"charades-24k", 20000, 0.002},
      {"charades-24k", 23999, 0.002}, {"epic-verb-36k", 0, 0.0003},
      {"epic-verb-36k", 27999, 0.0003}, {"epic-verb-36k", 28000, 0.00003},
      {"epic-verb-36k", 32000, 0.000003}, {"epic-noun-50k", 0, 0.001},
      {"epic-noun-50k", 40000, 0.0001},   {"epic-noun-50k", 45000, 0.00001},
      {"epic-noun-50k", 49999, 0.00001},
  };
  double worst = 0.0;
  for (const auto& f : fixtures) {
    const double got = lfb::train_preset(f.preset).schedule.lr_at(f.iter);
    worst = std::max(worst, std::abs(got - f.lr) / f.lr);
  }
  return {worst <= 1e-12,
          fmt("schedules: 4 presets, %zu fixture rates, max rel err %.1e "
              "(tol 1e-12)",
              std::size(fixtures), worst)};
}

// ---------------------------------------------------------------------------
// Check 10: determinism of training logs and bank serialization.
// ---------------------------------------------------------------------------

std::string quick_training_log(std::uint64_t seed) {
  lfb::SyntheticSpec spec;
  spec.dim = 12;
  spec.steps = 12;
  spec.num_classes = 4;
  spec.signal_offset = 4;
  spec.clip_span = 2;
  spec.train_episodes = 24;
  spec.test_episodes = 16;
  const auto data = lfb::generate_synthetic<double>(spec, 5);

  lfb::ModelConfig mc;
  mc.d_in = spec.dim;
  mc.d_model = 16;
  mc.num_classes = spec.num_classes;
  mc.fbo = lfb::FboKind::kNl;
  mc.fbo_cfg.d_f = 8;
  mc.fbo_cfg.layers = 1;
  mc.num_distractors = 4;

  lfb::TrainOptions opts;
  opts.iterations = 60;
  opts.batch_size = 4;
  opts.schedule = {0.05, {}, 60};
  opts.window = {6, lfb::WindowMode::kCausal};
  opts.eval_every = 25;
  opts.seed = seed;

  lfb::RngStream init(seed, lfb::RngUse::kInit);
  auto model = lfb::LfbModel::init(mc, init);
  std::ostringstream metrics;
  lfb::train_model(model, data, opts, &metrics);
  return metrics.str();
}

Verdict check_determinism() {
  const std::string log_a = quick_training_log(7);
  const std::string log_b = quick_training_log(7);
  const std::string log_other = quick_training_log(8);
  const bool logs_ok =
      !log_a.empty() && log_a == log_b && log_a != log_other;

  // The bank container stores f32, so the fixture sticks to values that are
  // exact at that width; bit-exact then means every payload bit survives.
  lfb::FeatureBank bank(5, 2.5);
  lfb::RngStream rng(3, lfb::RngUse::kSynthetic);
  const std::size_t steps[] = {2, 0, 3, 1};
  for (std::size_t n : steps) {
    Tensor rows(Shape{n, 5});
    lfb::fill_gaussian(rows, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows.at(i) = static_cast<double>(static_cast<float>(rows.at(i)));
    }
    if (n > 0) {
      rows.at(0, 0) = -0.0;
      rows.at(0, 1) = static_cast<double>(1e-30f);
      rows.at(0, 2) = static_cast<double>(-1e30f);
      rows.at(0, 3) = static_cast<double>(1.0f / 3.0f);
    }
    bank.append_step(rows);
  }
  std::ostringstream first;
  lfb::save_bank(bank, first);
  std::istringstream in(first.str());
  const auto reloaded = lfb::load_bank<double>(in);
  bool bits_ok = reloaded.dim() == bank.dim() &&
                 reloaded.num_steps() == bank.num_steps() &&
                 reloaded.steps_per_second() == bank.steps_per_second();
  for (std::size_t t = 0; bits_ok && t < bank.num_steps(); ++t) {
    const Tensor& a = bank.step(t);
    const Tensor& b = reloaded.step(t);
    bits_ok = a.rows() == b.rows() && a.cols() == b.cols();
    for (std::size_t i = 0; bits_ok && i < a.size(); ++i) {
      bits_ok = std::bit_cast<std::uint64_t>(a.at(i)) ==
                std::bit_cast<std::uint64_t>(b.at(i));
    }
  }
  std::ostringstream second;
  lfb::save_bank(reloaded, second);
  bits_ok = bits_ok && first.str() == second.str();

  return {logs_ok && bits_ok,
          fmt("determinism: training log identical across reruns (%zu bytes) "
              "and seed-sensitive: %s; bank round-trip bit-exact over %zu "
              "serialized bytes: %s",
              log_a.size(), logs_ok ? "yes" : "no", first.str().size(),
              bits_ok ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    Verdict (*run)();
  };
  const Entry entries[] = {
      {"gradient suite", check_gradients},
      {"attention oracle", check_attention_oracle},
      {"causality", check_causality},
      {"padding equivalence", check_padding_equivalence},
      {"shape contract", check_shape_contract},
      {"long-range task", check_long_range_task},
      {"average precision", check_average_precision},
      {"prior table", check_prior_table},
      {"schedule presets", check_schedules},
      {"determinism", check_determinism},
  };
  int failures = 0;
  int index = 0;
  for (const auto& entry : entries) {
    ++index;
    Verdict v;
    try {
      v = entry.run();
    } catch (const std::exception& e) {
      v = {false, fmt("%s: threw %s", entry.name, e.what())};
    }
    if (!v.pass) ++failures;
    std::printf("[%2d] %s  %s\n", index, v.pass ? "PASS" : "FAIL",
                v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/10 checks passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
