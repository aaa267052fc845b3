#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lfb/checkpoint.hpp"
#include "lfb/config.hpp"
#include "lfb/eval.hpp"
#include "lfb/model.hpp"
#include "lfb/synthetic.hpp"
#include "lfb/textio.hpp"
#include "lfb/training.hpp"

namespace lfb {

struct TrainOptions {
  std::size_t iterations = 400;
  std::size_t batch_size = 8;
  SgdSchedule schedule{0.05, {}, 400};
  double weight_decay = 1e-6;
  double momentum = 0.9;
  WindowSpec window{10, WindowMode::kCausal};
  std::size_t eval_every = 100;  ///< metrics cadence, in iterations
  std::uint64_t seed = 1;
  bool freeze_trunk = false;

  void validate() const {
    std::vector<std::string> problems;
    if (iterations == 0) problems.push_back("train.iterations must be positive");
    if (batch_size == 0) problems.push_back("train.batch_size must be positive");
    if (eval_every == 0) problems.push_back("train.eval_every must be positive");
    try {
      schedule.validate();
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
    if (!problems.empty()) throw ConfigError(problems);
  }
};

template <typename T>
struct EvalResultT {
  double top1 = 0;
  double top5 = 0;
  std::vector<std::vector<double>> scores;  ///< per episode, per class
};

template <typename T>
struct TrainResultT {
  std::vector<T> train_losses;  ///< one entry per iteration
  double test_top1 = 0;
  double test_top5 = 0;
};

namespace detail {

/// One metrics line: "<iteration> <split> <metric> <value>". Values print
/// with round-trip precision so identical runs yield identical logs.
inline void metrics_line(std::ostream* out, std::size_t iteration,
                         const char* split, const char* metric, double value) {
  if (!out) return;
  (*out) << iteration << " " << split << " " << metric << " "
         << format_double(value) << "\n";
}

/// Stacks all rows of every training bank into one raw-row pool, the
/// reservoir distractors are drawn from.
template <typename T>
TensorT<T> distractor_pool(const std::vector<EpisodeT<T>>& episodes) {
  std::size_t total = 0;
  for (const auto& ep : episodes) total += ep.bank.total_rows();
  if (total == 0) return TensorT<T>(Shape{0, 1});
  TensorT<T> pool(Shape{total, episodes.front().bank.dim()});
  std::size_t r = 0;
  for (const auto& ep : episodes) {
    for (std::size_t t = 0; t < ep.bank.num_steps(); ++t) {
      const TensorT<T>& step = ep.bank.step(t);
      for (std::size_t i = 0; i < step.rows(); ++i, ++r) {
        for (std::size_t j = 0; j < step.cols(); ++j) {
          pool.at(r, j) = step.at(i, j);
        }
      }
    }
  }
  return pool;
}

template <typename T>
TensorT<T> sample_rows(const TensorT<T>& pool, std::size_t count,
                       RngStream& rng) {
  TensorT<T> out(Shape{count, pool.cols()});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r =
        static_cast<std::size_t>(rng.next_below(pool.rows()));
    for (std::size_t j = 0; j < pool.cols(); ++j) {
      out.at(i, j) = pool.at(r, j);
    }
  }
  return out;
}

}  // namespace detail

/// Scores every episode in eval mode (no dropout, no rng draws) and reports
/// top-1 / top-5 accuracy against the episode labels.
template <typename T>
EvalResultT<T> eval_model(const LfbModelT<T>& model,
                          const std::vector<EpisodeT<T>>& episodes,
                          const WindowSpec& window, std::size_t clip_span) {
  EvalResultT<T> result;
  std::vector<std::size_t> labels;
  RngStream idle(0, RngUse::kDropout);  // eval mode consumes nothing
  for (const auto& ep : episodes) {
    const std::size_t t_q = ep.bank.num_steps() - 1;
    const TensorT<T> clip = clip_rows(ep, clip_span);
    const WindowedFeaturesT<T> win = ep.bank.window(t_q, window);
    TapeT<T> tape;
    const VarT<T> logits =
        model.forward(tape, clip, model.uses_window() ? &win.rows : nullptr,
                      nullptr, nullptr, idle, false);
    tape.clear();
    std::vector<double> scores(model.config().num_classes);
    for (std::size_t c = 0; c < scores.size(); ++c) {
      scores[c] = static_cast<double>(logits.value().at(0, c));
    }
    result.scores.push_back(std::move(scores));
    labels.push_back(ep.label);
  }
  if (!episodes.empty()) {
    const std::size_t classes = model.config().num_classes;
    result.top1 = topk_accuracy(result.scores, labels, 1);
    result.top5 = topk_accuracy(result.scores, labels, std::min<std::size_t>(
                                                           5, classes));
  }
  return result;
}

/// Deterministic synchronous SGD over the synthetic episodes. Batches are
/// sampled with replacement from the data stream; dropout and distractor
/// draws come from their own streams, so toggling evaluation cadence never
/// shifts the training trajectory. Metrics lines go to `metrics` when given.
template <typename T>
TrainResultT<T> train_model(LfbModelT<T>& model,
                            const SyntheticDatasetT<T>& data,
                            const TrainOptions& opts,
                            std::ostream* metrics = nullptr) {
  opts.validate();
  if (data.train.empty()) throw ValueError("train_model: no training episodes");

  RngStream data_rng(opts.seed, RngUse::kData);
  RngStream dropout_rng(opts.seed, RngUse::kDropout);
  RngStream distractor_rng(opts.seed, RngUse::kDistractors);

  const bool wants_distractors = model.config().fbo == FboKind::kSto &&
                                 model.config().num_distractors > 0;
  TensorT<T> pool;
  if (wants_distractors) pool = detail::distractor_pool(data.train);

  auto trainable = model.trainable(opts.freeze_trunk);
  SgdOptimizerT<T> optimizer(opts.schedule, T(opts.weight_decay),
                             T(opts.momentum));

  const std::size_t span = data.spec.clip_span;
  TrainResultT<T> result;
  result.train_losses.reserve(opts.iterations);

  for (std::size_t iter = 0; iter < opts.iterations; ++iter) {
    TapeT<T> tape;
    VarT<T> batch_logits;
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < opts.batch_size; ++b) {
      const std::size_t e =
          static_cast<std::size_t>(data_rng.next_below(data.train.size()));
      const EpisodeT<T>& ep = data.train[e];
      const std::size_t t_q = ep.bank.num_steps() - 1;
      const TensorT<T> clip = clip_rows(ep, span);
      const WindowedFeaturesT<T> win = ep.bank.window(t_q, opts.window);
      TensorT<T> distractors(Shape{0, 1});
      if (wants_distractors && pool.rows() > 0) {
        distractors = detail::sample_rows(
            pool, model.config().num_distractors, distractor_rng);
      }
      const VarT<T> logits = model.forward(
          tape, clip, model.uses_window() ? &win.rows : nullptr, nullptr,
          distractors.rows() > 0 ? &distractors : nullptr, dropout_rng, true);
      batch_logits = b == 0 ? logits : concat_rows(tape, batch_logits, logits);
      labels.push_back(ep.label);
    }
    const VarT<T> loss = ce_loss(tape, batch_logits, labels);
    result.train_losses.push_back(loss.value().at(0));
    loss.grad().at(0) = T(1);
    tape.run_backward();
    optimizer.step(trainable, iter);

    const std::size_t done = iter + 1;
    if (done % opts.eval_every == 0 || done == opts.iterations) {
      detail::metrics_line(metrics, done, "train", "loss",
                           static_cast<double>(loss.value().at(0)));
      if (!data.test.empty()) {
        const EvalResultT<T> ev =
            eval_model(model, data.test, opts.window, span);
        detail::metrics_line(metrics, done, "test", "top1", ev.top1);
        detail::metrics_line(metrics, done, "test", "top5", ev.top5);
        if (done == opts.iterations) {
          result.test_top1 = ev.top1;
          result.test_top5 = ev.top5;
        }
      }
    }
  }
  return result;
}

template <typename T>
struct TwoStageResultT {
  LfbModelT<T> stage1_model;
  LfbModelT<T> stage2_model;
  TrainResultT<T> stage1;
  TrainResultT<T> stage2;
};

/// Freeze-then-attach training: stage 1 trains trunk and head without any
/// context operator; stage 2 initializes the configured operator, restores
/// the stage-1 trunk, freezes it, and trains the operator plus a fresh head
/// for half the stage-1 iteration count.
template <typename T>
TwoStageResultT<T> two_stage_train(const SyntheticDatasetT<T>& data,
                                   const ModelConfig& stage2_cfg,
                                   const TrainOptions& opts,
                                   std::ostream* metrics = nullptr) {
  opts.validate();
  RngStream init_rng(opts.seed, RngUse::kInit);

  ModelConfig stage1_cfg = stage2_cfg;
  stage1_cfg.fbo = FboKind::kNone;

  TwoStageResultT<T> result{LfbModelT<T>::init(stage1_cfg, init_rng),
                            LfbModelT<T>(), {}, {}};
  TrainOptions stage1_opts = opts;
  stage1_opts.freeze_trunk = false;
  result.stage1 = train_model(result.stage1_model, data, stage1_opts, metrics);

  // Hand the trained trunk to stage 2 through the checkpoint path: the
  // stage-1 head is an extra blob the sub-model load ignores.
  std::vector<std::pair<std::string, TensorT<T>>> blobs;
  for (const auto& np : result.stage1_model.parameters()) {
    blobs.emplace_back(np.name, np.param.value());
  }
  std::map<std::string, TensorT<T>> by_name(blobs.begin(), blobs.end());

  result.stage2_model = LfbModelT<T>::init(stage2_cfg, init_rng);
  std::vector<NamedParamT<T>> trunk_only;
  for (auto& np : result.stage2_model.parameters()) {
    if (np.name.rfind("trunk.", 0) == 0) trunk_only.push_back(np);
  }
  load_into(by_name, trunk_only);

  TrainOptions stage2_opts = opts;
  stage2_opts.freeze_trunk = true;
  stage2_opts.iterations = std::max<std::size_t>(1, opts.iterations / 2);
  stage2_opts.schedule.total_iterations = stage2_opts.iterations;
  result.stage2 = train_model(result.stage2_model, data, stage2_opts, metrics);
  return result;
}

/// Manifest describing one command invocation and the artifacts it wrote.
inline Config run_manifest(
    const std::string& command, const Config& cfg, std::uint64_t seed,
    const std::vector<std::pair<std::string, std::string>>& outputs,
    const std::string& started_at, const std::string& finished_at) {
  Config m;
  m.set("run", "command", command);
  m.set("run", "config_hash", cfg.hash_hex());
  m.set("run", "seed", std::to_string(seed));
  m.set("run", "started_at", started_at);
  m.set("run", "finished_at", finished_at);
  for (const auto& [key, path] : outputs) m.set("outputs", key, path);
  return m;
}

}  // namespace lfb
