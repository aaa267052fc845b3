#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lfb/gradcheck_suite.hpp"
#include "lfb/trainer.hpp"

namespace {

// Exit codes; each error path maps to exactly one of these.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitGradCheck = 5;
constexpr int kExitNumeric = 6;

const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  command line usage error\n"
    "  2  configuration rejected (every violated key is listed)\n"
    "  3  file I/O failure (missing or unwritable file)\n"
    "  4  malformed input file (bad magic, version, truncation, or\n"
    "     inconsistent contents)\n"
    "  5  gradient check failure\n"
    "  6  numeric or shape failure during computation\n";

std::string iso_utc_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

lfb::Config load_config_or_empty(const std::string& path) {
  if (path.empty()) return lfb::Config();
  return lfb::Config::parse_file(path);
}

// ---------------------------------------------------------------------------
// Flag overlays shared by train and eval.
// ---------------------------------------------------------------------------

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 1;
  bool seed_given = false;
  long window = -1;  // <0 means "not given"
  bool causal = false;
  bool causal_given = false;
  std::string fbo;
  long layers = 0;
  std::string act;
};

void add_model_flags(CLI::App* cmd, CommonFlags* f) {
  cmd->add_option("--fbo", f->fbo,
                  "context operator: nl, avg, max, none, or sto")
      ->check(CLI::IsMember({"nl", "avg", "max", "none", "sto"}));
  cmd->add_option("--layers", f->layers, "attention stack depth")
      ->check(CLI::Range(1, 3));
  cmd->add_option("--act", f->act, "activation order in attention blocks")
      ->check(CLI::IsMember({"pre", "post"}));
}

lfb::NlVariant parse_variant(const std::string& name) {
  if (name == "embedded_gaussian") return lfb::NlVariant::kEmbeddedGaussian;
  if (name == "dot_product") return lfb::NlVariant::kDotProduct;
  if (name == "concat") return lfb::NlVariant::kConcat;
  throw lfb::ValueError("unknown attention variant '" + name +
                        "' (expected embedded_gaussian, dot_product, or "
                        "concat)");
}

const char* variant_name(lfb::NlVariant v) {
  switch (v) {
    case lfb::NlVariant::kEmbeddedGaussian: return "embedded_gaussian";
    case lfb::NlVariant::kDotProduct: return "dot_product";
    case lfb::NlVariant::kConcat: return "concat";
  }
  return "?";
}

/// Builds the model configuration from defaults, then the [model]/[fbo]
/// config sections, then explicit command line flags, in that order.
lfb::ModelConfig resolve_model_config(const lfb::Config& cfg,
                                      const CommonFlags& flags,
                                      std::size_t d_in,
                                      std::size_t num_classes) {
  lfb::ModelConfig m;
  m.d_in = d_in;
  m.num_classes = num_classes;
  m.d_model = 32;
  m.fbo_cfg.d_f = 16;
  m.num_distractors = 8;

  if (cfg.has("model", "d_model")) m.d_model = cfg.get_size("model", "d_model");
  if (cfg.has("model", "d_f")) m.fbo_cfg.d_f = cfg.get_size("model", "d_f");
  if (cfg.has("model", "distractors")) {
    m.num_distractors = cfg.get_size("model", "distractors");
  }
  if (cfg.has("model", "fbo")) {
    m.fbo = lfb::parse_fbo_kind(cfg.get("model", "fbo"));
  }
  if (cfg.has("fbo", "layers")) {
    m.fbo_cfg.layers = cfg.get_size("fbo", "layers");
  }
  if (cfg.has("fbo", "variant")) {
    m.fbo_cfg.variant = parse_variant(cfg.get("fbo", "variant"));
  }
  if (cfg.has("fbo", "act")) {
    const std::string act = cfg.get("fbo", "act");
    if (act != "pre" && act != "post") {
      throw lfb::ConfigError({"[fbo] act must be pre or post, got " + act});
    }
    m.fbo_cfg.activation = act == "pre" ? lfb::ActivationOrder::kPre
                                        : lfb::ActivationOrder::kPost;
  }
  if (cfg.has("fbo", "dropout")) {
    m.fbo_cfg.dropout_rate = cfg.get_double("fbo", "dropout");
  }
  if (cfg.has("fbo", "scale")) m.fbo_cfg.use_scale = cfg.get_bool("fbo", "scale");
  if (cfg.has("fbo", "ln")) m.fbo_cfg.use_ln = cfg.get_bool("fbo", "ln");
  if (cfg.has("fbo", "share_reduction")) {
    m.fbo_cfg.share_reduction = cfg.get_bool("fbo", "share_reduction");
  }
  if (cfg.has("fbo", "unmasked_zero_pad")) {
    m.fbo_cfg.unmasked_zero_pad = cfg.get_bool("fbo", "unmasked_zero_pad");
  }

  if (!flags.fbo.empty()) m.fbo = lfb::parse_fbo_kind(flags.fbo);
  if (flags.layers > 0) {
    m.fbo_cfg.layers = static_cast<std::size_t>(flags.layers);
  }
  if (!flags.act.empty()) {
    m.fbo_cfg.activation = flags.act == "pre" ? lfb::ActivationOrder::kPre
                                              : lfb::ActivationOrder::kPost;
  }
  m.validate();
  return m;
}

/// Train options from [train], with command line flags taking precedence.
lfb::TrainOptions resolve_train_options(const lfb::Config& cfg,
                                        const CommonFlags& flags) {
  lfb::TrainOptions o;
  o.schedule = {0.05, {}, o.iterations};

  if (cfg.has("train", "preset")) {
    const lfb::TrainPreset& p = lfb::train_preset(cfg.get("train", "preset"));
    o.schedule = p.schedule;
    o.weight_decay = p.weight_decay;
    o.iterations = p.schedule.total_iterations;
  }
  if (cfg.has("train", "iterations")) {
    o.iterations = cfg.get_size("train", "iterations");
    if (!cfg.has("train", "preset")) o.schedule.total_iterations = o.iterations;
  }
  if (cfg.has("train", "lr")) o.schedule.base_lr = cfg.get_double("train", "lr");
  if (cfg.has("train", "drop0")) {
    // Drops serialize as "START x MULTIPLIER", one key per drop.
    o.schedule.drops.clear();
    for (std::size_t i = 0; cfg.has("train", "drop" + std::to_string(i));
         ++i) {
      const std::string text = cfg.get("train", "drop" + std::to_string(i));
      const std::vector<std::string> f = lfb::detail::split_fields(text);
      if (f.size() != 3 || f[1] != "x") {
        throw lfb::ConfigError({"[train] drop" + std::to_string(i) +
                                " must look like \"20000 x 0.1\", got \"" +
                                text + "\""});
      }
      o.schedule.drops.push_back(
          {static_cast<std::size_t>(lfb::detail::parse_int(f[0], 0)),
           lfb::detail::parse_double(f[2], 0)});
    }
  }
  if (cfg.has("train", "batch")) o.batch_size = cfg.get_size("train", "batch");
  if (cfg.has("train", "weight_decay")) {
    o.weight_decay = cfg.get_double("train", "weight_decay");
  }
  if (cfg.has("train", "momentum")) {
    o.momentum = cfg.get_double("train", "momentum");
  }
  if (cfg.has("train", "eval_every")) {
    o.eval_every = cfg.get_size("train", "eval_every");
  }
  if (cfg.has("train", "window")) {
    o.window.half_window = cfg.get_size("train", "window");
  }
  if (cfg.has("train", "causal")) {
    o.window.mode = cfg.get_bool("train", "causal") ? lfb::WindowMode::kCausal
                                                    : lfb::WindowMode::kBatch;
  }

  if (flags.seed_given || !cfg.has("train", "seed")) {
    o.seed = flags.seed;
  } else {
    o.seed = static_cast<std::uint64_t>(cfg.get_int("train", "seed"));
  }
  if (flags.window >= 0) {
    o.window.half_window = static_cast<std::size_t>(flags.window);
  }
  if (flags.causal_given) {
    o.window.mode =
        flags.causal ? lfb::WindowMode::kCausal : lfb::WindowMode::kBatch;
  }
  o.validate();
  return o;
}

/// The fully resolved settings, written next to the artifacts so a later
/// eval (or a reader) sees what actually ran rather than what was passed.
lfb::Config resolved_config(const lfb::ModelConfig& m,
                            const lfb::TrainOptions& o) {
  lfb::Config cfg;
  cfg.set("model", "d_in", std::to_string(m.d_in));
  cfg.set("model", "d_model", std::to_string(m.d_model));
  cfg.set("model", "num_classes", std::to_string(m.num_classes));
  cfg.set("model", "fbo", lfb::fbo_kind_name(m.fbo));
  cfg.set("model", "d_f", std::to_string(m.fbo_cfg.d_f));
  cfg.set("model", "distractors", std::to_string(m.num_distractors));
  cfg.set("fbo", "layers", std::to_string(m.fbo_cfg.layers));
  cfg.set("fbo", "variant", variant_name(m.fbo_cfg.variant));
  cfg.set("fbo", "act",
          m.fbo_cfg.activation == lfb::ActivationOrder::kPre ? "pre" : "post");
  cfg.set("fbo", "dropout", lfb::detail::format_double(m.fbo_cfg.dropout_rate));
  cfg.set("fbo", "scale", m.fbo_cfg.use_scale ? "true" : "false");
  cfg.set("fbo", "ln", m.fbo_cfg.use_ln ? "true" : "false");
  cfg.set("fbo", "share_reduction",
          m.fbo_cfg.share_reduction ? "true" : "false");
  cfg.set("fbo", "unmasked_zero_pad",
          m.fbo_cfg.unmasked_zero_pad ? "true" : "false");
  cfg.set("train", "iterations", std::to_string(o.iterations));
  cfg.set("train", "batch", std::to_string(o.batch_size));
  cfg.set("train", "lr", lfb::detail::format_double(o.schedule.base_lr));
  for (std::size_t i = 0; i < o.schedule.drops.size(); ++i) {
    cfg.set("train", "drop" + std::to_string(i),
            std::to_string(o.schedule.drops[i].start_iteration) + " x " +
                lfb::detail::format_double(o.schedule.drops[i].multiplier));
  }
  cfg.set("train", "weight_decay",
          lfb::detail::format_double(o.weight_decay));
  cfg.set("train", "momentum", lfb::detail::format_double(o.momentum));
  cfg.set("train", "eval_every", std::to_string(o.eval_every));
  cfg.set("train", "window", std::to_string(o.window.half_window));
  cfg.set("train", "causal",
          o.window.mode == lfb::WindowMode::kCausal ? "true" : "false");
  cfg.set("train", "seed", std::to_string(o.seed));
  return cfg;
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out_dir;
  CommonFlags flags;
};

int run_gen_synthetic(const GenArgs& args) {
  const std::string started = iso_utc_now();
  const lfb::Config cfg = load_config_or_empty(args.flags.config_path);

  lfb::SyntheticSpec spec;
  const auto size_key = [&](const char* key, std::size_t* field) {
    if (cfg.has("dataset", key)) *field = cfg.get_size("dataset", key);
  };
  const auto double_key = [&](const char* key, double* field) {
    if (cfg.has("dataset", key)) *field = cfg.get_double("dataset", key);
  };
  size_key("dim", &spec.dim);
  size_key("steps", &spec.steps);
  size_key("num_classes", &spec.num_classes);
  size_key("signal_offset", &spec.signal_offset);
  size_key("clip_span", &spec.clip_span);
  size_key("min_actors", &spec.min_actors);
  size_key("max_actors", &spec.max_actors);
  size_key("train_episodes", &spec.train_episodes);
  size_key("test_episodes", &spec.test_episodes);
  double_key("cue_strength", &spec.cue_strength);
  double_key("beacon_strength", &spec.beacon_strength);
  double_key("noise_scale", &spec.noise_scale);
  double_key("background_scale", &spec.background_scale);
  double_key("steps_per_second", &spec.steps_per_second);
  spec.validate();

  std::uint64_t seed = args.flags.seed;
  if (!args.flags.seed_given && cfg.has("dataset", "seed")) {
    seed = static_cast<std::uint64_t>(cfg.get_int("dataset", "seed"));
  }

  const lfb::SyntheticDataset ds = lfb::generate_synthetic(spec, seed);
  lfb::save_synthetic_dataset(args.out_dir, ds);

  std::vector<std::pair<std::string, std::string>> outputs = {
      {"dataset", args.out_dir + "/dataset.ini"},
      {"labels", args.out_dir + "/labels.txt"}};
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    outputs.emplace_back("train_" + std::to_string(i),
                         args.out_dir + "/" +
                             lfb::detail::episode_file("train", i));
  }
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    outputs.emplace_back("test_" + std::to_string(i),
                         args.out_dir + "/" +
                             lfb::detail::episode_file("test", i));
  }
  lfb::run_manifest("gen-synthetic", lfb::synthetic_spec_config(spec, seed),
                    seed, outputs, started, iso_utc_now())
      .save_file(args.out_dir + "/manifest.ini");

  std::cout << "wrote " << args.out_dir << ": train=" << ds.train.size()
            << " test=" << ds.test.size() << " dim=" << spec.dim
            << " steps=" << spec.steps << " classes=" << spec.num_classes
            << " signal_offset=" << spec.signal_offset
            << " clip_span=" << spec.clip_span << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// build-bank
// ---------------------------------------------------------------------------

struct BuildBankArgs {
  std::string in_path;
  std::string out_path;
  double steps_per_second = 1.0;
  double duration = -1.0;  // <0: infer T from the last row
  std::size_t dim = 0;     // 0: infer from the first row
};

int run_build_bank(const BuildBankArgs& args) {
  const std::string started = iso_utc_now();
  std::ifstream in(args.in_path);
  if (!in) throw lfb::IoError("cannot open " + args.in_path);

  // Rows: "<time_sec> <v0> ... <v_{d-1}>", comments with '#'.
  std::vector<std::pair<double, std::vector<double>>> rows;
  std::size_t dim = args.dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::vector<std::string> fields = lfb::detail::split_fields(line);
    if (fields.empty()) continue;
    try {
      const double when = lfb::detail::parse_double(fields[0], line_no);
      std::vector<double> values;
      values.reserve(fields.size() - 1);
      for (std::size_t i = 1; i < fields.size(); ++i) {
        values.push_back(lfb::detail::parse_double(fields[i], line_no));
      }
      if (values.empty()) {
        throw lfb::ValueError("line " + std::to_string(line_no) +
                              ": a row needs a time and at least one value");
      }
      if (when < 0) {
        throw lfb::ValueError("line " + std::to_string(line_no) +
                              ": negative timestamp");
      }
      if (dim == 0) dim = values.size();
      if (values.size() != dim) {
        throw lfb::ValueError("line " + std::to_string(line_no) + ": got " +
                              std::to_string(values.size()) +
                              " values, expected " + std::to_string(dim));
      }
      rows.emplace_back(when, std::move(values));
    } catch (const lfb::ValueError& e) {
      throw lfb::FormatError(lfb::FormatError::Kind::kInconsistent, e.what());
    }
  }

  if (!(args.steps_per_second > 0)) {
    throw lfb::ConfigError({"--sps must be positive"});
  }
  const auto step_of = [&](double when) {
    return static_cast<std::size_t>(when * args.steps_per_second);
  };
  std::size_t num_steps = 0;
  if (args.duration >= 0) {
    num_steps = static_cast<std::size_t>(
        std::llround(args.duration * args.steps_per_second));
  } else {
    for (const auto& [when, values] : rows) {
      num_steps = std::max(num_steps, step_of(when) + 1);
    }
  }
  for (const auto& [when, values] : rows) {
    if (step_of(when) >= num_steps) {
      throw lfb::FormatError(
          lfb::FormatError::Kind::kInconsistent,
          "row at t=" + lfb::detail::format_double(when) +
              "s falls outside the declared duration");
    }
  }

  lfb::FeatureBank bank(dim == 0 ? 1 : dim, args.steps_per_second);
  std::vector<std::vector<std::size_t>> per_step(num_steps);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    per_step[step_of(rows[i].first)].push_back(i);
  }
  for (std::size_t s = 0; s < num_steps; ++s) {
    lfb::Tensor step(lfb::Shape{per_step[s].size(), bank.dim()});
    for (std::size_t r = 0; r < per_step[s].size(); ++r) {
      const std::vector<double>& v = rows[per_step[s][r]].second;
      for (std::size_t j = 0; j < v.size(); ++j) step.at(r, j) = v[j];
    }
    bank.append_step(std::move(step));
  }
  lfb::save_bank_file(bank, args.out_path);

  lfb::Config cfg;
  cfg.set("bank", "input", args.in_path);
  cfg.set("bank", "steps_per_second",
          lfb::detail::format_double(args.steps_per_second));
  lfb::run_manifest("build-bank", cfg, 0, {{"bank", args.out_path}}, started,
                    iso_utc_now())
      .save_file(args.out_path + ".manifest");

  std::cout << "wrote " << args.out_path << ": T=" << bank.num_steps()
            << " d=" << bank.dim() << " rows=" << bank.total_rows() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data_dir;
  std::string out_dir;
  bool two_stage = false;
  CommonFlags flags;
};

int run_train(const TrainArgs& args) {
  const std::string started = iso_utc_now();
  const lfb::Config cfg = load_config_or_empty(args.flags.config_path);
  const lfb::SyntheticDataset data =
      lfb::load_synthetic_dataset<double>(args.data_dir);

  const lfb::ModelConfig mcfg = resolve_model_config(
      cfg, args.flags, data.spec.dim, data.spec.num_classes);
  const lfb::TrainOptions opts = resolve_train_options(cfg, args.flags);

  std::filesystem::create_directories(args.out_dir);
  std::ofstream metrics(args.out_dir + "/metrics.log");
  if (!metrics) {
    throw lfb::IoError("cannot open " + args.out_dir +
                       "/metrics.log for writing");
  }

  double final_top1 = 0, final_top5 = 0;
  std::vector<lfb::NamedParam> params;
  if (args.two_stage) {
    const auto result =
        lfb::two_stage_train<double>(data, mcfg, opts, &metrics);
    final_top1 = result.stage2.test_top1;
    final_top5 = result.stage2.test_top5;
    params = result.stage2_model.parameters();
  } else {
    lfb::RngStream init(opts.seed, lfb::RngUse::kInit);
    lfb::LfbModel model = lfb::LfbModel::init(mcfg, init);
    const auto result = lfb::train_model(model, data, opts, &metrics);
    final_top1 = result.test_top1;
    final_top5 = result.test_top5;
    params = model.parameters();
  }
  metrics.flush();
  if (!metrics) throw lfb::IoError("failed writing metrics.log");

  lfb::save_checkpoint_file(args.out_dir + "/model.ckpt", params);
  const lfb::Config resolved = resolved_config(mcfg, opts);
  resolved.save_file(args.out_dir + "/model.ini");
  lfb::run_manifest("train", resolved, opts.seed,
                    {{"checkpoint", args.out_dir + "/model.ckpt"},
                     {"config", args.out_dir + "/model.ini"},
                     {"metrics", args.out_dir + "/metrics.log"}},
                    started, iso_utc_now())
      .save_file(args.out_dir + "/manifest.ini");

  std::cout << "trained " << lfb::fbo_kind_name(mcfg.fbo) << " for "
            << opts.iterations << " iterations"
            << (args.two_stage ? " (two stage)" : "") << ": test top1 "
            << lfb::detail::format_double(final_top1) << ", top5 "
            << lfb::detail::format_double(final_top5) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data_dir;
  std::string run_dir;
  std::string ckpt_path;
  std::string out_path;
  std::string windows;  // comma-separated sweep, e.g. "4,8,16"
  CommonFlags flags;
};

int run_eval(const EvalArgs& args) {
  const std::string started = iso_utc_now();
  std::string config_path = args.flags.config_path;
  std::string ckpt_path = args.ckpt_path;
  if (!args.run_dir.empty()) {
    if (config_path.empty()) config_path = args.run_dir + "/model.ini";
    if (ckpt_path.empty()) ckpt_path = args.run_dir + "/model.ckpt";
  }
  if (config_path.empty() || ckpt_path.empty()) {
    throw lfb::ConfigError(
        {"eval needs --run DIR, or both --config and --ckpt"});
  }

  const lfb::Config cfg = lfb::Config::parse_file(config_path);
  const lfb::SyntheticDataset data =
      lfb::load_synthetic_dataset<double>(args.data_dir);
  const lfb::ModelConfig mcfg = resolve_model_config(
      cfg, args.flags, data.spec.dim, data.spec.num_classes);

  lfb::RngStream init(0, lfb::RngUse::kInit);
  lfb::LfbModel model = lfb::LfbModel::init(mcfg, init);
  auto params = model.parameters();
  lfb::load_into(lfb::load_checkpoint_file<double>(ckpt_path), params);

  lfb::WindowSpec window{10, lfb::WindowMode::kCausal};
  if (cfg.has("train", "window")) {
    window.half_window = cfg.get_size("train", "window");
  }
  if (cfg.has("train", "causal")) {
    window.mode = cfg.get_bool("train", "causal") ? lfb::WindowMode::kCausal
                                                  : lfb::WindowMode::kBatch;
  }
  if (args.flags.window >= 0) {
    window.half_window = static_cast<std::size_t>(args.flags.window);
  }
  if (args.flags.causal_given) {
    window.mode = args.flags.causal ? lfb::WindowMode::kCausal
                                    : lfb::WindowMode::kBatch;
  }

  std::vector<std::size_t> sweep;
  if (!args.windows.empty()) {
    std::istringstream in(args.windows);
    std::string token;
    while (std::getline(in, token, ',')) {
      const std::vector<std::string> fields = lfb::detail::split_fields(token);
      try {
        if (fields.size() != 1) throw lfb::ValueError("empty sweep entry");
        sweep.push_back(static_cast<std::size_t>(
            lfb::detail::parse_int(fields[0], sweep.size() + 1)));
      } catch (const lfb::ValueError&) {
        throw lfb::ConfigError({"--windows expects comma-separated integers, "
                                "got '" +
                                args.windows + "'"});
      }
    }
  }

  std::ostringstream lines;
  if (sweep.empty()) {
    const auto ev =
        lfb::eval_model(model, data.test, window, data.spec.clip_span);
    lfb::detail::metrics_line(&lines, 0, "test", "top1", ev.top1);
    lfb::detail::metrics_line(&lines, 0, "test", "top5", ev.top5);
  } else {
    for (const std::size_t w : sweep) {
      const lfb::WindowSpec ws{w, window.mode};
      const auto ev =
          lfb::eval_model(model, data.test, ws, data.spec.clip_span);
      const std::string tag = "@w" + std::to_string(w);
      lfb::detail::metrics_line(&lines, 0, "test", ("top1" + tag).c_str(),
                                ev.top1);
      lfb::detail::metrics_line(&lines, 0, "test", ("top5" + tag).c_str(),
                                ev.top5);
    }
  }

  if (args.out_path.empty()) {
    std::cout << lines.str();
  } else {
    std::ofstream out(args.out_path);
    if (!out) throw lfb::IoError("cannot open " + args.out_path);
    out << lines.str();
    out.flush();
    if (!out) throw lfb::IoError("failed writing " + args.out_path);
    lfb::run_manifest("eval", cfg, 0, {{"metrics", args.out_path}}, started,
                      iso_utc_now())
        .save_file(args.out_path + ".manifest");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradCheckArgs {
  std::uint64_t seed = 1;
  std::size_t seeds = 20;
};

int run_gradcheck(const GradCheckArgs& args) {
  if (args.seeds == 0) throw lfb::ConfigError({"--seeds must be positive"});

  std::map<std::string, double> worst;
  std::size_t failures = 0;
  for (std::uint64_t s = args.seed; s < args.seed + args.seeds; ++s) {
    for (const lfb::GradCheckResult& r : lfb::run_gradient_checks(s)) {
      double& w = worst[r.name];
      w = std::max(w, r.rel_err);
      if (!r.pass) ++failures;
    }
  }
  for (const auto& [name, err] : worst) {
    std::printf("%-28s %12.3e  %s\n", name.c_str(), err,
                err < lfb::kGradCheckTol ? "pass" : "FAIL");
  }
  std::printf("checked %zu ops over %zu seeds (base %llu): %s\n", worst.size(),
              args.seeds, static_cast<unsigned long long>(args.seed),
              failures == 0 ? "all passed"
                            : (std::to_string(failures) + " failures").c_str());
  return failures == 0 ? kExitOk : kExitGradCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Long-term feature bank pipeline: synthetic data, bank building, "
      "training, evaluation, and gradient checks."};
  app.require_subcommand(1);
  app.footer(kExitCodeHelp);

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand(
      "gen-synthetic",
      "Generate a synthetic long-range recognition dataset (feature banks "
      "plus labels); the class cue sits signal_offset steps before the end, "
      "outside the clip span");
  gen_cmd->add_option("--out", gen.out_dir, "output dataset directory")
      ->required();
  gen_cmd->add_option("--config", gen.flags.config_path,
                      "ini file; [dataset] keys override generator defaults");
  auto* gen_seed = gen_cmd->add_option("--seed", gen.flags.seed,
                                       "generator seed (default 1)");
  gen_cmd->callback([&] {
    gen.flags.seed_given = gen_seed->count() > 0;
  });

  BuildBankArgs bank;
  CLI::App* bank_cmd = app.add_subcommand(
      "build-bank",
      "Build a .lfbk feature bank from a text stream of timestamped rows "
      "(\"<time_sec> <v0> <v1> ...\" per line, '#' comments)");
  bank_cmd->add_option("--in", bank.in_path, "input text stream")->required();
  bank_cmd->add_option("--out", bank.out_path, "output .lfbk path")
      ->required();
  bank_cmd->add_option("--sps", bank.steps_per_second,
                       "bank steps per second (default 1.0)");
  bank_cmd->add_option(
      "--duration", bank.duration,
      "stream length in seconds; fixes T = duration * sps (default: "
      "inferred from the last row)");
  bank_cmd->add_option("--dim", bank.dim,
                       "expected feature width (default: inferred)");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "Train a classifier on a generated dataset and write "
               "checkpoint, metrics log, and manifest");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")
      ->required();
  train_cmd->add_option("--out", train.out_dir, "run output directory")
      ->required();
  train_cmd->add_option("--config", train.flags.config_path,
                        "ini file with [model]/[fbo]/[train] sections");
  auto* train_seed =
      train_cmd->add_option("--seed", train.flags.seed, "training seed");
  auto* train_window = train_cmd->add_option(
      "--window", train.flags.window, "bank half-window w in steps");
  auto* train_causal = train_cmd->add_flag(
      "--causal,!--batch", train.flags.causal,
      "causal window [t-2w, t] instead of centered [t-w, t+w]");
  train_cmd->add_flag("--two-stage", train.two_stage,
                      "train the trunk without context first, then freeze it "
                      "and train the context operator");
  add_model_flags(train_cmd, &train.flags);
  train_cmd->callback([&] {
    train.flags.seed_given = train_seed->count() > 0;
    train.flags.causal_given = train_causal->count() > 0;
    (void)train_window;
  });

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Score a trained checkpoint on a dataset's held-out episodes");
  eval_cmd->add_option("--data", eval.data_dir, "dataset directory")
      ->required();
  eval_cmd->add_option("--run", eval.run_dir,
                       "training output directory (model.ini + model.ckpt)");
  eval_cmd->add_option("--config", eval.flags.config_path,
                       "resolved model config (alternative to --run)");
  eval_cmd->add_option("--ckpt", eval.ckpt_path,
                       "checkpoint path (alternative to --run)");
  eval_cmd->add_option("--out", eval.out_path,
                       "metrics output file (default: stdout)");
  eval_cmd->add_option("--window", eval.flags.window,
                       "override the half-window from the config");
  eval_cmd->add_option(
      "--windows", eval.windows,
      "comma-separated half-window sweep; one metrics row per setting");
  auto* eval_causal =
      eval_cmd->add_flag("--causal,!--batch", eval.flags.causal,
                         "override the window mode from the config");
  add_model_flags(eval_cmd, &eval.flags);
  eval_cmd->callback(
      [&] { eval.flags.causal_given = eval_causal->count() > 0; });

  GradCheckArgs grad;
  CLI::App* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference checks for every differentiable "
                   "operation; nonzero exit on any failure");
  grad_cmd->add_option("--seed", grad.seed, "first seed (default 1)");
  grad_cmd->add_option("--seeds", grad.seeds,
                       "number of consecutive seeds (default 20)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_synthetic(gen);
    if (bank_cmd->parsed()) return run_build_bank(bank);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (grad_cmd->parsed()) return run_gradcheck(grad);
  } catch (const lfb::ConfigError& e) {
    std::cerr << "config error:\n" << e.what() << "\n";
    return kExitConfig;
  } catch (const lfb::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const lfb::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const lfb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
