#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lfb/bank_io.hpp"
#include "lfb/config.hpp"
#include "lfb/feature_bank.hpp"
#include "lfb/rng.hpp"
#include "lfb/tensor.hpp"
#include "lfb/textio.hpp"

namespace lfb {

/// Parameters of the long-range cue task. Each episode is a feature stream
/// of `steps` time steps with 1..2 actor rows per step; almost every row is
/// isotropic background noise. Exactly one row, planted `signal_offset`
/// steps before the final (labeled) step, carries the class signal:
///
///   cue = beacon * beacon_strength + centroid[label] * cue_strength + noise
///
/// The beacon is a fixed direction orthogonal to every class centroid, so
/// finding the cue row and reading its class are separable subproblems. The
/// clip observed by a model spans only the trailing `clip_span` steps, which
/// are background by construction: the label is unrecoverable from the clip
/// alone whenever signal_offset >= clip_span, and trivially recoverable once
/// a context window reaches back far enough to cover the cue step.
struct SyntheticSpec {
  std::size_t dim = 32;
  std::size_t steps = 48;
  std::size_t num_classes = 5;
  std::size_t signal_offset = 20;  // cue-to-label distance k, in steps
  std::size_t clip_span = 4;       // trailing steps visible to the model
  std::size_t min_actors = 1;
  std::size_t max_actors = 2;
  double cue_strength = 4.0;
  double beacon_strength = 4.0;
  double noise_scale = 0.3;
  double background_scale = 1.0;
  double steps_per_second = 1.0;
  std::size_t train_episodes = 60;
  std::size_t test_episodes = 40;

  std::size_t cue_step() const { return steps - 1 - signal_offset; }

  void validate() const {
    std::vector<std::string> problems;
    if (num_classes < 2) problems.push_back("num_classes must be at least 2");
    if (dim <= num_classes) {
      problems.push_back(
          "dim must exceed num_classes so a beacon direction orthogonal to "
          "all centroids exists");
    }
    if (steps == 0) problems.push_back("steps must be positive");
    if (steps > 0 && signal_offset > steps - 1) {
      problems.push_back("signal_offset must be at most steps - 1");
    }
    if (clip_span == 0 || clip_span > steps) {
      problems.push_back("clip_span must be in [1, steps]");
    }
    if (min_actors == 0) problems.push_back("min_actors must be positive");
    if (max_actors < min_actors) {
      problems.push_back("max_actors must be at least min_actors");
    }
    if (cue_strength < 0 || beacon_strength < 0 || noise_scale < 0 ||
        background_scale < 0) {
      problems.push_back("strengths and scales must not be negative");
    }
    if (!(steps_per_second > 0)) {
      problems.push_back("steps_per_second must be positive");
    }
    if (train_episodes == 0) {
      problems.push_back("train_episodes must be positive");
    }
    if (!problems.empty()) throw ConfigError(problems);
  }
};

template <typename T>
struct EpisodeT {
  FeatureBankT<T> bank;
  std::size_t label = 0;
};

using Episode = EpisodeT<double>;

/// The class directions and the cue-marker direction, derivable from
/// (spec, seed) alone so loaders and test oracles can reconstruct them.
template <typename T>
struct TaskGeometryT {
  TensorT<T> centroids;  // num_classes x dim, unit rows
  TensorT<T> beacon;     // dim, unit, orthogonal to all centroids
};

using TaskGeometry = TaskGeometryT<double>;

template <typename T>
struct SyntheticDatasetT {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  TaskGeometryT<T> geometry;
  std::vector<EpisodeT<T>> train;
  std::vector<EpisodeT<T>> test;
};

using SyntheticDataset = SyntheticDatasetT<double>;

namespace detail {

template <typename T>
void normalize_row(TensorT<T>& m, std::size_t row) {
  T norm_sq = T(0);
  for (std::size_t j = 0; j < m.cols(); ++j) {
    norm_sq += m.at(row, j) * m.at(row, j);
  }
  const T norm = std::sqrt(norm_sq);
  if (!(norm > T(1e-9))) {
    throw ValueError("synthetic geometry: degenerate direction");
  }
  for (std::size_t j = 0; j < m.cols(); ++j) m.at(row, j) /= norm;
}

}  // namespace detail

/// Draws the geometry from the head of the synthetic stream: unit centroids,
/// then a beacon orthogonalized against the centroid span. Consumes a fixed
/// number of draws, so episode generation can continue on the same stream.
template <typename T>
TaskGeometryT<T> draw_task_geometry(const SyntheticSpec& spec,
                                    RngStream& rng) {
  TaskGeometryT<T> g;
  g.centroids = TensorT<T>(Shape{spec.num_classes, spec.dim});
  fill_gaussian(g.centroids, rng, T(0), T(1));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    detail::normalize_row(g.centroids, c);
  }

  // Orthonormal basis of the centroid span (modified Gram-Schmidt), then the
  // beacon is a random direction minus its projection onto that span.
  TensorT<T> basis = g.centroids;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      T dot = T(0);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        dot += basis.at(c, j) * basis.at(p, j);
      }
      for (std::size_t j = 0; j < spec.dim; ++j) {
        basis.at(c, j) -= dot * basis.at(p, j);
      }
    }
    detail::normalize_row(basis, c);
  }
  TensorT<T> beacon(Shape{1, spec.dim});
  fill_gaussian(beacon, rng, T(0), T(1));
  for (std::size_t p = 0; p < spec.num_classes; ++p) {
    T dot = T(0);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      dot += beacon.at(0, j) * basis.at(p, j);
    }
    for (std::size_t j = 0; j < spec.dim; ++j) {
      beacon.at(0, j) -= dot * basis.at(p, j);
    }
  }
  detail::normalize_row(beacon, 0);
  g.beacon = beacon.reshaped(Shape{spec.dim});
  return g;
}

/// Generates one episode from the stream: label, then per step a row count
/// and that many feature rows in order. Row 0 of the cue step carries the
/// planted signal; every other row is background noise.
template <typename T>
EpisodeT<T> draw_episode(const SyntheticSpec& spec,
                         const TaskGeometryT<T>& geometry, RngStream& rng) {
  EpisodeT<T> ep{FeatureBankT<T>(spec.dim, spec.steps_per_second),
                 static_cast<std::size_t>(rng.next_below(spec.num_classes))};
  const std::size_t cue_at = spec.cue_step();
  for (std::size_t t = 0; t < spec.steps; ++t) {
    const std::size_t rows =
        spec.min_actors + static_cast<std::size_t>(rng.next_below(
                              spec.max_actors - spec.min_actors + 1));
    TensorT<T> step(Shape{rows, spec.dim});
    for (std::size_t i = 0; i < rows; ++i) {
      const bool is_cue = (t == cue_at && i == 0);
      const T scale = is_cue ? T(spec.noise_scale) : T(spec.background_scale);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        step.at(i, j) = T(rng.next_gaussian()) * scale;
      }
      if (is_cue) {
        for (std::size_t j = 0; j < spec.dim; ++j) {
          step.at(i, j) += T(spec.beacon_strength) * geometry.beacon.at(j) +
                           T(spec.cue_strength) *
                               geometry.centroids.at(ep.label, j);
        }
      }
    }
    ep.bank.append_step(std::move(step));
  }
  return ep;
}

/// Whole dataset as a pure function of (spec, seed): geometry, then train
/// episodes, then test episodes, all off one counter-based stream.
template <typename T = double>
SyntheticDatasetT<T> generate_synthetic(const SyntheticSpec& spec,
                                        std::uint64_t seed) {
  spec.validate();
  SyntheticDatasetT<T> ds;
  ds.spec = spec;
  ds.seed = seed;
  RngStream rng(seed, RngUse::kSynthetic);
  ds.geometry = draw_task_geometry<T>(spec, rng);
  for (std::size_t e = 0; e < spec.train_episodes; ++e) {
    ds.train.push_back(draw_episode(spec, ds.geometry, rng));
  }
  for (std::size_t e = 0; e < spec.test_episodes; ++e) {
    ds.test.push_back(draw_episode(spec, ds.geometry, rng));
  }
  return ds;
}

/// The short-term observation: all rows of the trailing `clip_span` steps,
/// stacked in step order.
template <typename T>
TensorT<T> clip_rows(const EpisodeT<T>& ep, std::size_t span) {
  const std::size_t steps = ep.bank.num_steps();
  if (span == 0 || span > steps) {
    throw ValueError("clip_rows: span must be in [1, steps]");
  }
  std::size_t total = 0;
  for (std::size_t t = steps - span; t < steps; ++t) {
    total += ep.bank.step_rows(t);
  }
  TensorT<T> out(Shape{total, ep.bank.dim()});
  std::size_t r = 0;
  for (std::size_t t = steps - span; t < steps; ++t) {
    const TensorT<T>& step = ep.bank.step(t);
    for (std::size_t i = 0; i < step.rows(); ++i, ++r) {
      for (std::size_t j = 0; j < step.cols(); ++j) {
        out.at(r, j) = step.at(i, j);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: dataset.ini (spec + seed), labels.txt
// ("split index label" lines), and one .lfbk bank per episode named
// train_NNNN.lfbk / test_NNNN.lfbk.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string episode_file(const char* split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.lfbk", split, index);
  return buf;
}

}  // namespace detail

inline Config synthetic_spec_config(const SyntheticSpec& spec,
                                    std::uint64_t seed) {
  Config cfg;
  cfg.set("dataset", "dim", std::to_string(spec.dim));
  cfg.set("dataset", "steps", std::to_string(spec.steps));
  cfg.set("dataset", "num_classes", std::to_string(spec.num_classes));
  cfg.set("dataset", "signal_offset", std::to_string(spec.signal_offset));
  cfg.set("dataset", "clip_span", std::to_string(spec.clip_span));
  cfg.set("dataset", "min_actors", std::to_string(spec.min_actors));
  cfg.set("dataset", "max_actors", std::to_string(spec.max_actors));
  cfg.set("dataset", "cue_strength", detail::format_double(spec.cue_strength));
  cfg.set("dataset", "beacon_strength",
          detail::format_double(spec.beacon_strength));
  cfg.set("dataset", "noise_scale", detail::format_double(spec.noise_scale));
  cfg.set("dataset", "background_scale",
          detail::format_double(spec.background_scale));
  cfg.set("dataset", "steps_per_second",
          detail::format_double(spec.steps_per_second));
  cfg.set("dataset", "train_episodes", std::to_string(spec.train_episodes));
  cfg.set("dataset", "test_episodes", std::to_string(spec.test_episodes));
  cfg.set("dataset", "seed", std::to_string(seed));
  return cfg;
}

inline std::pair<SyntheticSpec, std::uint64_t> synthetic_spec_from_config(
    const Config& cfg) {
  SyntheticSpec spec;
  spec.dim = cfg.get_size("dataset", "dim");
  spec.steps = cfg.get_size("dataset", "steps");
  spec.num_classes = cfg.get_size("dataset", "num_classes");
  spec.signal_offset = cfg.get_size("dataset", "signal_offset");
  spec.clip_span = cfg.get_size("dataset", "clip_span");
  spec.min_actors = cfg.get_size("dataset", "min_actors");
  spec.max_actors = cfg.get_size("dataset", "max_actors");
  spec.cue_strength = cfg.get_double("dataset", "cue_strength");
  spec.beacon_strength = cfg.get_double("dataset", "beacon_strength");
  spec.noise_scale = cfg.get_double("dataset", "noise_scale");
  spec.background_scale = cfg.get_double("dataset", "background_scale");
  spec.steps_per_second = cfg.get_double("dataset", "steps_per_second");
  spec.train_episodes = cfg.get_size("dataset", "train_episodes");
  spec.test_episodes = cfg.get_size("dataset", "test_episodes");
  const std::uint64_t seed =
      static_cast<std::uint64_t>(cfg.get_int("dataset", "seed"));
  spec.validate();
  return {spec, seed};
}

template <typename T>
void save_synthetic_dataset(const std::string& dir,
                            const SyntheticDatasetT<T>& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  synthetic_spec_config(ds.spec, ds.seed).save_file(dir + "/dataset.ini");

  std::ofstream labels(dir + "/labels.txt");
  if (!labels) throw IoError("cannot open '" + dir + "/labels.txt'");
  auto write_split = [&](const char* split,
                         const std::vector<EpisodeT<T>>& episodes) {
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      labels << split << " " << i << " " << episodes[i].label << "\n";
      save_bank_file(episodes[i].bank,
                     dir + "/" + detail::episode_file(split, i));
    }
  };
  write_split("train", ds.train);
  write_split("test", ds.test);
  if (!labels) throw IoError("failed writing '" + dir + "/labels.txt'");
}

template <typename T = double>
SyntheticDatasetT<T> load_synthetic_dataset(const std::string& dir) {
  const Config cfg = Config::parse_file(dir + "/dataset.ini");
  SyntheticDatasetT<T> ds;
  std::tie(ds.spec, ds.seed) = synthetic_spec_from_config(cfg);
  {
    RngStream rng(ds.seed, RngUse::kSynthetic);
    ds.geometry = draw_task_geometry<T>(ds.spec, rng);
  }

  std::vector<std::size_t> train_labels(ds.spec.train_episodes, 0);
  std::vector<std::size_t> test_labels(ds.spec.test_episodes, 0);
  std::vector<bool> train_seen(ds.spec.train_episodes, false);
  std::vector<bool> test_seen(ds.spec.test_episodes, false);

  std::ifstream labels(dir + "/labels.txt");
  if (!labels) throw IoError("cannot open '" + dir + "/labels.txt'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(labels, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0].front() == '#') continue;
    if (fields.size() != 3) {
      throw ValueError("labels.txt line " + std::to_string(line_no) +
                       ": expected 'split index label'");
    }
    const std::size_t index =
        static_cast<std::size_t>(detail::parse_int(fields[1], line_no));
    const std::size_t label =
        static_cast<std::size_t>(detail::parse_int(fields[2], line_no));
    if (label >= ds.spec.num_classes) {
      throw ValueError("labels.txt line " + std::to_string(line_no) +
                       ": label out of range");
    }
    auto note = [&](std::vector<std::size_t>& out, std::vector<bool>& seen) {
      if (index >= out.size()) {
        throw ValueError("labels.txt line " + std::to_string(line_no) +
                         ": episode index out of range");
      }
      out[index] = label;
      seen[index] = true;
    };
    if (fields[0] == "train") {
      note(train_labels, train_seen);
    } else if (fields[0] == "test") {
      note(test_labels, test_seen);
    } else {
      throw ValueError("labels.txt line " + std::to_string(line_no) +
                       ": unknown split '" + fields[0] + "'");
    }
  }
  auto check_complete = [](const std::vector<bool>& seen, const char* split) {
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (!seen[i]) {
        throw ValueError(std::string("labels.txt: missing ") + split +
                         " episode " + std::to_string(i));
      }
    }
  };
  check_complete(train_seen, "train");
  check_complete(test_seen, "test");

  auto read_split = [&](const char* split, const std::vector<std::size_t>& ls,
                        std::vector<EpisodeT<T>>& out) {
    for (std::size_t i = 0; i < ls.size(); ++i) {
      EpisodeT<T> ep{
          load_bank_file<T>(dir + "/" + detail::episode_file(split, i)),
          ls[i]};
      if (ep.bank.dim() != ds.spec.dim ||
          ep.bank.num_steps() != ds.spec.steps) {
        throw ValueError(std::string(split) + " episode " + std::to_string(i) +
                         " does not match the dataset spec");
      }
      out.push_back(std::move(ep));
    }
  };
  read_split("train", train_labels, ds.train);
  read_split("test", test_labels, ds.test);
  return ds;
}

}  // namespace lfb
