#pragma once
// Accuracy measurement, schedule grid search, and the four-algorithm
// benchmark experiment (plain MLE, fixed-rate dropout, shared optimized rate,
// per-feature optimized rates) with the per-algorithm test-time predictors:
// MLE scores the full model, fixed dropout uses the expected-mask rule, and
// the rate-optimizing variants use the Gaussian rule with their trained
// keep-probabilities.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "bdrop/models.hpp"
#include "bdrop/rng.hpp"
#include "bdrop/synthetic_data.hpp"
#include "bdrop/training.hpp"

namespace bdrop {

/// Fraction of samples whose thresholded prediction (p >= 0.5 maps to 1)
/// matches the label.
inline double accuracy(const LogisticRegressionModel& model, const PredictionVariant& variant,
                       const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::vector<double> keep = variant.keep_probs;
  if (keep.empty()) keep.assign(model.dim(), 1.0);
  detail::check_dims(keep.size(), model.dim(), "accuracy: keep probabilities");

  std::optional<MaskDistribution> q;
  if (variant.kind == PredictionVariant::Kind::ExactEnumeration ||
      variant.kind == PredictionVariant::Kind::MonteCarlo) {
    q = MaskDistribution::per_feature(keep);
  }
  Rng mc_rng(variant.seed);

  std::size_t hits = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const auto x = data.input(r);
    double p = 0.0;
    switch (variant.kind) {
      case PredictionVariant::Kind::ExpectedMask:
        p = model.predict_expected_mask(x, keep);
        break;
      case PredictionVariant::Kind::GaussianApprox:
        p = model.predict_gaussian(x, keep);
        break;
      case PredictionVariant::Kind::ExactEnumeration:
        p = predict_enumerate(model, x, *q);
        break;
      case PredictionVariant::Kind::MonteCarlo:
        p = predict_mc(model, x, *q, variant.n_samples, mc_rng);
        break;
    }
    const double predicted = p >= 0.5 ? 1.0 : 0.0;
    if (predicted == data.label(r)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Candidate step-size sets. The model step searches (a, b); the rate step
/// additionally searches (c, d).
struct GridSpec {
  std::vector<double> a_set{3e-4, 1e-3, 3e-2, 1e-2};
  std::vector<double> b_set{1e2, 1e3, 1e4};
  std::vector<double> c_set{3e-4, 1e-3, 3e-2, 1e-2};
  std::vector<double> d_set{1e3, 1e4, 1e5};

  static GridSpec defaults() { return {}; }

  static GridSpec single(double a, double b, double c, double d) {
    return {{a}, {b}, {c}, {d}};
  }

  void validate() const {
    for (const auto* set : {&a_set, &b_set, &c_set, &d_set}) {
      if (set->empty()) throw std::invalid_argument("GridSpec: empty candidate set");
      for (double v : *set) {
        if (!(v > 0.0)) throw std::invalid_argument("GridSpec: candidates must be positive");
      }
    }
  }
};

struct GridCell {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;  // 0 marks "not searched" (algorithms without a rate step)
  double d = 0.0;

  bool operator==(const GridCell&) const = default;
};

inline bool uses_rate_schedule(Algorithm alg) {
  return alg == Algorithm::Uor || alg == Algorithm::For || alg == Algorithm::Grouped;
}

inline std::vector<GridCell> make_cells(const GridSpec& grid, Algorithm alg) {
  grid.validate();
  std::vector<GridCell> cells;
  if (uses_rate_schedule(alg)) {
    for (double a : grid.a_set)
      for (double b : grid.b_set)
        for (double c : grid.c_set)
          for (double d : grid.d_set) cells.push_back({a, b, c, d});
  } else {
    for (double a : grid.a_set)
      for (double b : grid.b_set) cells.push_back({a, b, 0.0, 0.0});
  }
  return cells;
}

struct CellResult {
  GridCell cell;
  bool ok = false;
  std::string error;
  double validation_accuracy = 0.0;
};

struct TrainedRun {
  LogisticRegressionModel model;
  std::optional<MaskDistribution> mask;
};

struct GridSearchResult {
  GridCell best;
  double validation_accuracy = 0.0;
  std::vector<CellResult> cells;
  TrainedRun best_run;  // the winning cell's trained model, reusable as-is
};

namespace detail {

inline std::uint64_t cell_seed(std::uint64_t base, const GridCell& cell) {
  std::uint64_t s = mix_seed(base, std::bit_cast<std::uint64_t>(cell.a));
  s = mix_seed(s, std::bit_cast<std::uint64_t>(cell.b));
  s = mix_seed(s, std::bit_cast<std::uint64_t>(cell.c));
  s = mix_seed(s, std::bit_cast<std::uint64_t>(cell.d));
  return s;
}

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::min(workers ? workers : 1, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

/// Train one run of the given algorithm. base.seed is used as-is.
inline TrainedRun run_training(Algorithm alg, const Dataset& train, const StepSchedule& sched,
                               const TrainConfig& base) {
  TrainConfig cfg = base;
  cfg.algorithm = alg;
  LogisticRegressionModel model(train.n_cols);  // weights start at zero
  switch (alg) {
    case Algorithm::Mle:
      return {train_mle(std::move(model), train, sched, cfg), std::nullopt};
    case Algorithm::FixedDropout:
      return {train_standard_dropout(std::move(model), train, sched, cfg), std::nullopt};
    default: {
      auto result = train_bayesian_dropout(std::move(model), train, sched, cfg);
      return {std::move(result.model), std::move(result.mask)};
    }
  }
}

/// The test-time predictor paired with each algorithm.
inline PredictionVariant predictor_for(Algorithm alg, const TrainedRun& run, double fixed_rate) {
  switch (alg) {
    case Algorithm::Mle:
      return PredictionVariant::plain();
    case Algorithm::FixedDropout:
      return PredictionVariant::expected_mask(
          std::vector<double>(run.model.dim(), 1.0 - fixed_rate));
    default:
      return PredictionVariant::gaussian(run.mask->expected_mask());
  }
}

/// Exhaustive search over grid cells; one training run per cell, scored on
/// the validation split. Ties break toward smaller a, then c, then b, then d.
/// A cell whose training aborts is marked failed and skipped.
inline GridSearchResult grid_search(const GridSpec& grid, Algorithm alg, const DataTriple& data,
                                    const StepSchedule& proto, const TrainConfig& base,
                                    std::size_t workers = 1) {
  if (data.train.size() == 0 || data.valid.size() == 0) {
    throw std::invalid_argument("grid_search: train and validation splits must be nonempty");
  }
  const std::vector<GridCell> cells = make_cells(grid, alg);
  std::vector<CellResult> results(cells.size());
  std::vector<TrainedRun> runs(cells.size());

  detail::parallel_for(cells.size(), workers, [&](std::size_t i) {
    const GridCell& cell = cells[i];
    CellResult& r = results[i];
    r.cell = cell;
    StepSchedule sched = proto;
    sched.a = cell.a;
    sched.b = cell.b;
    if (uses_rate_schedule(alg)) {
      sched.c = cell.c;
      sched.d = cell.d;
    } else {
      sched.c = 0.0;
    }
    TrainConfig cfg = base;
    cfg.seed = detail::cell_seed(base.seed, cell);
    try {
      runs[i] = run_training(alg, data.train, sched, cfg);
      r.validation_accuracy =
          accuracy(runs[i].model, predictor_for(alg, runs[i], cfg.fixed_rate), data.valid);
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
  });

  std::size_t best = results.size();
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].ok) continue;
    if (best == results.size()) {
      best = i;
      continue;
    }
    const auto key = [](const CellResult& cr) {
      return std::make_tuple(-cr.validation_accuracy, cr.cell.a, cr.cell.c, cr.cell.b, cr.cell.d);
    };
    if (key(results[i]) < key(results[best])) best = i;
  }
  if (best == results.size()) throw std::runtime_error("grid_search: every cell failed");
  return {results[best].cell, results[best].validation_accuracy, std::move(results),
          std::move(runs[best])};
}

struct AlgorithmResult {
  Algorithm algorithm = Algorithm::Mle;
  std::string name;
  bool ok = false;
  std::string error;
  GridCell schedule;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> keep_probs;  // trained keep-probabilities, rate-optimizing runs only
  std::string predictor;
  double wall_seconds = 0.0;  // informational; excluded from serialized results
  std::vector<double> repeat_test_accuracies;
};

struct ExperimentConfig {
  DataConfig data;
  GridSpec grid_mle;
  GridSpec grid_fixed;
  GridSpec grid_uor;
  GridSpec grid_for;
  std::size_t iterations = 0;  // 0 means 10 passes over the training set
  DeltaMode delta_mode = DeltaMode::Constant;
  std::optional<double> delta = 1e-3;
  double fixed_rate = 0.5;
  double initial_keep_prob = 0.5;
  std::size_t minibatch_size = 1;
  bool baseline_enabled = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t repeats = 1;  // extra winner re-trainings with fresh seeds, for variance reporting

  std::size_t resolved_iterations() const {
    return iterations ? iterations : 10 * data.n_train;
  }
};

struct ExperimentResult {
  DataConfig data;
  double bayes_optimal = 0.0;
  std::vector<AlgorithmResult> algorithms;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  DataConfig data_cfg = cfg.data;
  data_cfg.seed = derive_seed(cfg.seed, "data");
  const DataTriple data = generate(data_cfg);

  ExperimentResult result;
  result.data = data_cfg;
  result.bayes_optimal = bayes_optimal_accuracy(data_cfg);

  const std::pair<Algorithm, const GridSpec*> runs[4] = {
      {Algorithm::Mle, &cfg.grid_mle},
      {Algorithm::FixedDropout, &cfg.grid_fixed},
      {Algorithm::Uor, &cfg.grid_uor},
      {Algorithm::For, &cfg.grid_for},
  };

  // algorithms are independent jobs; split the worker budget between the
  // algorithm level and each algorithm's grid cells
  const std::size_t outer = std::min<std::size_t>(std::max<std::size_t>(cfg.workers, 1), 4);
  const std::size_t inner = std::max<std::size_t>(cfg.workers / outer, 1);

  result.algorithms.resize(4);
  detail::parallel_for(4, outer, [&](std::size_t slot) {
    const auto& [alg, grid] = runs[slot];
    AlgorithmResult ar;
    ar.algorithm = alg;
    ar.name = std::string(to_string(alg));
    const auto started = std::chrono::steady_clock::now();
    try {
      StepSchedule proto;
      proto.delta_mode = cfg.delta_mode;
      proto.delta = cfg.delta;
      TrainConfig base;
      base.iterations = cfg.resolved_iterations();
      base.seed = derive_seed(cfg.seed, "train/" + ar.name);
      base.fixed_rate = cfg.fixed_rate;
      base.initial_keep_prob = cfg.initial_keep_prob;
      base.minibatch_size = cfg.minibatch_size;
      base.baseline_enabled = cfg.baseline_enabled;

      GridSearchResult gs = grid_search(*grid, alg, data, proto, base, inner);
      const TrainedRun& run = gs.best_run;
      const PredictionVariant pred = predictor_for(alg, run, cfg.fixed_rate);

      ar.schedule = gs.best;
      ar.validation_accuracy = gs.validation_accuracy;
      ar.test_accuracy = accuracy(run.model, pred, data.test);
      ar.predictor = pred.label;
      if (run.mask) ar.keep_probs = run.mask->expected_mask();
      ar.repeat_test_accuracies.push_back(ar.test_accuracy);

      StepSchedule sched = proto;
      sched.a = gs.best.a;
      sched.b = gs.best.b;
      sched.c = uses_rate_schedule(alg) ? gs.best.c : 0.0;
      sched.d = uses_rate_schedule(alg) ? gs.best.d : proto.d;
      for (std::size_t r = 1; r < cfg.repeats; ++r) {
        TrainConfig repeat = base;
        repeat.seed = mix_seed(detail::cell_seed(base.seed, gs.best), r);
        const TrainedRun rerun = run_training(alg, data.train, sched, repeat);
        ar.repeat_test_accuracies.push_back(
            accuracy(rerun.model, predictor_for(alg, rerun, cfg.fixed_rate), data.test));
      }
      ar.ok = true;
    } catch (const std::exception& e) {
      ar.ok = false;
      ar.error = e.what();
    }
    ar.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.algorithms[slot] = std::move(ar);
  });
  return result;
}

}  // namespace bdrop
