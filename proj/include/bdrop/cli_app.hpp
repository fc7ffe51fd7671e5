#pragma once
// CLI11 front end: subcommands gen-data, train, eval, experiment. Every
// subcommand accepts --config pointing at a flat key=value file ('#' starts a
// comment; keys are the long option names without dashes). Config values are
// applied as defaults before flags are parsed, so the precedence is
// flags > config file > built-in defaults.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bdrop/cli.hpp"
#include "bdrop/text_io.hpp"

namespace bdrop::cli {

namespace detail {

inline std::map<std::string, std::string> load_config_map(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    const auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected key=value");
    }
    kv[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

inline std::uint64_t cfg_u64(const std::string& v, const std::string& key) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: invalid integer for " + key + ": '" + v + "'");
  }
}

inline double cfg_double(const std::string& v, const std::string& key) {
  return parse_double(v, "config: " + key);
}

inline bool cfg_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: invalid boolean for " + key + ": '" + v + "'");
}

using ConfigMap = std::map<std::string, std::string>;

inline void apply_config(const ConfigMap& kv, GenDataOptions& opt) {
  for (const auto& [k, v] : kv) {
    if (k == "n-informative") opt.data.n_informative = cfg_u64(v, k);
    else if (k == "n-noise") opt.data.n_noise = cfg_u64(v, k);
    else if (k == "mean-shift") opt.data.mean_shift = cfg_double(v, k);
    else if (k == "feature-std") opt.data.feature_std = cfg_double(v, k);
    else if (k == "n-train") opt.data.n_train = cfg_u64(v, k);
    else if (k == "n-valid") opt.data.n_valid = cfg_u64(v, k);
    else if (k == "n-test") opt.data.n_test = cfg_u64(v, k);
    else if (k == "seed") opt.seed = cfg_u64(v, k);
    else if (k == "out-dir") opt.out_dir = v;
    else throw std::runtime_error("config: unknown gen-data key '" + k + "'");
  }
}

inline void apply_config(const ConfigMap& kv, TrainOptions& opt) {
  for (const auto& [k, v] : kv) {
    if (k == "algorithm") opt.algorithm = v;
    else if (k == "data") opt.data_path = v;
    else if (k == "iterations") opt.iterations = cfg_u64(v, k);
    else if (k == "a") opt.a = cfg_double(v, k);
    else if (k == "b") opt.b = cfg_double(v, k);
    else if (k == "c") opt.c = cfg_double(v, k);
    else if (k == "d") opt.d = cfg_double(v, k);
    else if (k == "delta-mode") opt.delta_mode = v;
    else if (k == "delta") opt.delta = cfg_double(v, k);
    else if (k == "rate") opt.rate = cfg_double(v, k);
    else if (k == "initial-keep") opt.initial_keep = cfg_double(v, k);
    else if (k == "minibatch") opt.minibatch = cfg_u64(v, k);
    else if (k == "baseline") opt.baseline = cfg_bool(v, k);
    else if (k == "group-boundary") {
      opt.group_boundaries.clear();
      for (const auto& part : split(v, ',')) opt.group_boundaries.push_back(cfg_u64(std::string(part), k));
    } else if (k == "seed") opt.seed = cfg_u64(v, k);
    else if (k == "out-dir") opt.out_dir = v;
    else throw std::runtime_error("config: unknown train key '" + k + "'");
  }
}

inline void apply_config(const ConfigMap& kv, EvalOptions& opt) {
  for (const auto& [k, v] : kv) {
    if (k == "model") opt.model_path = v;
    else if (k == "mask") opt.mask_path = v;
    else if (k == "data") opt.data_path = v;
    else if (k == "predictor") opt.predictor = v;
    else if (k == "keep-prob") opt.keep_prob = cfg_double(v, k);
    else if (k == "mc-samples") opt.mc_samples = cfg_u64(v, k);
    else if (k == "seed") opt.seed = cfg_u64(v, k);
    else if (k == "out-dir") opt.out_dir = v;
    else throw std::runtime_error("config: unknown eval key '" + k + "'");
  }
}

inline void apply_config(const ConfigMap& kv, ExperimentOptions& opt) {
  for (const auto& [k, v] : kv) {
    if (k == "scale") opt.scale = v;
    else if (k == "grid") opt.grid = v;
    else if (k == "seed") opt.seed = cfg_u64(v, k);
    else if (k == "workers") opt.workers = cfg_u64(v, k);
    else if (k == "repeats") opt.repeats = cfg_u64(v, k);
    else if (k == "iterations") opt.iterations = cfg_u64(v, k);
    else if (k == "out-dir") opt.out_dir = v;
    else throw std::runtime_error("config: unknown experiment key '" + k + "'");
  }
}

/// The --config value, wherever it appears in the argument list.
inline std::string find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return {};
}

}  // namespace detail

inline int run(std::vector<std::string> args) {
  CLI::App app{"Dropout training with optimizable dropout rates"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenDataOptions gen;
  TrainOptions train;
  EvalOptions eval;
  ExperimentOptions exp;

  // config defaults are applied before CLI11 sees the flags
  try {
    const std::string config_path = detail::find_config_arg(args);
    if (!config_path.empty()) {
      const auto kv = detail::load_config_map(config_path);
      const auto sub = std::find_if(args.begin(), args.end(),
                                    [](const std::string& a) { return !a.starts_with("-"); });
      const std::string name = sub == args.end() ? "" : *sub;
      if (name == "gen-data") detail::apply_config(kv, gen);
      else if (name == "train") detail::apply_config(kv, train);
      else if (name == "eval") detail::apply_config(kv, eval);
      else if (name == "experiment") detail::apply_config(kv, exp);
      else throw std::runtime_error("--config requires a subcommand");
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  std::string config_sink;

  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic benchmark dataset");
  gen_cmd->add_option("--config", config_sink, "flat key=value config file");
  gen_cmd->add_option("--n-informative", gen.data.n_informative, "label-correlated feature count");
  gen_cmd->add_option("--n-noise", gen.data.n_noise, "label-independent feature count");
  gen_cmd->add_option("--mean-shift", gen.data.mean_shift, "informative mean shift per class");
  gen_cmd->add_option("--feature-std", gen.data.feature_std, "feature standard deviation");
  gen_cmd->add_option("--n-train", gen.data.n_train, "training rows");
  gen_cmd->add_option("--n-valid", gen.data.n_valid, "validation rows");
  gen_cmd->add_option("--n-test", gen.data.n_test, "test rows");
  gen_cmd->add_option("--seed", gen.seed, "root random seed");
  gen_cmd->add_option("--out-dir", gen.out_dir, "output directory");

  auto* train_cmd = app.add_subcommand("train", "train one model on a dataset CSV");
  train_cmd->add_option("--config", config_sink, "flat key=value config file");
  train_cmd->add_option("--algorithm", train.algorithm, "mle|fixed|uor|for|grouped");
  auto* train_data = train_cmd->add_option("--data", train.data_path, "training CSV");
  if (train.data_path.empty()) train_data->required();
  train_cmd->add_option("--iterations", train.iterations, "step count (default: 10 data passes)");
  train_cmd->add_option("--a", train.a, "model step size numerator");
  train_cmd->add_option("--b", train.b, "model step size decay scale");
  train_cmd->add_option("--c", train.c, "rate step size numerator");
  train_cmd->add_option("--d", train.d, "rate step size decay scale");
  train_cmd->add_option("--delta-mode", train.delta_mode, "constant|one-over-t");
  train_cmd->add_option("--delta", train.delta, "effective-sample weight (0: 1/train size)");
  train_cmd->add_option("--rate", train.rate, "fixed dropout rate");
  train_cmd->add_option("--initial-keep", train.initial_keep, "initial keep probability");
  train_cmd->add_option("--minibatch", train.minibatch, "samples per step");
  train_cmd->add_flag("--baseline", train.baseline, "enable the moving-average baseline");
  train_cmd->add_option("--group-boundary", train.group_boundaries,
                        "feature index starting a new rate group (repeatable)");
  train_cmd->add_option("--seed", train.seed, "root random seed");
  train_cmd->add_option("--out-dir", train.out_dir, "output directory");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset CSV");
  eval_cmd->add_option("--config", config_sink, "flat key=value config file");
  auto* eval_model = eval_cmd->add_option("--model", eval.model_path, "model checkpoint");
  if (eval.model_path.empty()) eval_model->required();
  eval_cmd->add_option("--mask", eval.mask_path, "mask distribution checkpoint");
  auto* eval_data = eval_cmd->add_option("--data", eval.data_path, "dataset CSV");
  if (eval.data_path.empty()) eval_data->required();
  eval_cmd->add_option("--predictor", eval.predictor, "plain|expected-mask|gaussian|enumerate|mc");
  eval_cmd->add_option("--keep-prob", eval.keep_prob, "uniform keep probability when no mask given");
  eval_cmd->add_option("--mc-samples", eval.mc_samples, "samples for the mc predictor");
  eval_cmd->add_option("--seed", eval.seed, "root random seed");
  eval_cmd->add_option("--out-dir", eval.out_dir, "output directory");

  auto* exp_cmd = app.add_subcommand("experiment", "run the four-algorithm benchmark");
  exp_cmd->add_option("--config", config_sink, "flat key=value config file");
  exp_cmd->add_option("--scale", exp.scale, "smoke|paper");
  exp_cmd->add_option("--grid", exp.grid, "best (documented cells) | full (whole grid search)");
  exp_cmd->add_option("--seed", exp.seed, "root random seed");
  exp_cmd->add_option("--workers", exp.workers, "parallel grid workers");
  exp_cmd->add_option("--repeats", exp.repeats, "winner re-trainings for variance reporting");
  exp_cmd->add_option("--iterations", exp.iterations, "override the preset step count");
  exp_cmd->add_option("--out-dir", exp.out_dir, "output directory");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(train);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (exp_cmd->parsed()) return cmd_experiment(exp);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc) - 1);
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace bdrop::cli
