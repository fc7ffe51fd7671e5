#pragma once
// Stochastic-gradient training loops over masked models.
//
// Three regimes share one step discipline (draw sample indices, draw a mask,
// update): plain MLE with an all-ones mask, standard dropout with a fixed
// rate, and rate-optimizing dropout where the mask distribution's logits are
// trained alongside the model. The logit update combines a score-function
// estimate of the expected log-likelihood gradient with the exact gradient of
// the prior cross-entropy plus entropy, the latter weighted by the
// effective-sample factor delta.
//
// Exact enumeration versions of the variational lower bound and the marginal
// log-likelihood are provided for small mask dimensions; they are the
// ground truth the stochastic updates are tested against.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdrop/mask_distribution.hpp"
#include "bdrop/rng.hpp"

namespace bdrop {

enum class Algorithm { Mle, FixedDropout, Uor, For, Grouped };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Mle: return "mle";
    case Algorithm::FixedDropout: return "fixed";
    case Algorithm::Uor: return "uor";
    case Algorithm::For: return "for";
    case Algorithm::Grouped: return "grouped";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view name) {
  if (name == "mle") return Algorithm::Mle;
  if (name == "fixed") return Algorithm::FixedDropout;
  if (name == "uor") return Algorithm::Uor;
  if (name == "for") return Algorithm::For;
  if (name == "grouped") return Algorithm::Grouped;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "'");
}

enum class DeltaMode { Constant, OneOverT };

/// Decaying step sizes: eta_t = a/(1+t/b) for model parameters,
/// eps_t = c/(1+t/d) for mask logits. c may be zero to freeze the rates.
struct StepSchedule {
  double a = 1e-3;
  double b = 1e3;
  double c = 1e-3;
  double d = 1e4;
  DeltaMode delta_mode = DeltaMode::Constant;
  std::optional<double> delta;  // Constant mode; unset means 1 / (training set size)

  double eta(std::size_t t) const { return a / (1.0 + static_cast<double>(t) / b); }
  double eps(std::size_t t) const { return c / (1.0 + static_cast<double>(t) / d); }

  double delta_at(std::size_t t, std::size_t n_train) const {
    if (delta_mode == DeltaMode::OneOverT) return 1.0 / static_cast<double>(std::max<std::size_t>(t, 1));
    if (delta) return *delta;
    return 1.0 / static_cast<double>(n_train);
  }

  void validate() const {
    if (!(a > 0.0) || !(b > 0.0) || !(d > 0.0) || !(c >= 0.0)) {
      throw std::invalid_argument("StepSchedule: requires a, b, d > 0 and c >= 0");
    }
    if (delta && !(*delta > 0.0)) {
      throw std::invalid_argument("StepSchedule: delta must be positive");
    }
  }
};

struct ProgressRecord {
  std::size_t iteration = 0;
  double eta = 0.0;
  double eps = 0.0;
  double train_ll = 0.0;   // mean sampled log-likelihood since the last record
  double mean_keep = 0.0;  // mean keep-probability over mask elements
};

using ProgressFn = std::function<void(const ProgressRecord&)>;

struct TrainConfig {
  Algorithm algorithm = Algorithm::Mle;
  std::size_t iterations = 0;
  double fixed_rate = 0.5;  // FixedDropout only
  std::uint64_t seed = 0;
  std::size_t minibatch_size = 1;
  bool baseline_enabled = false;
  double baseline_decay = 0.99;
  PriorMask prior;  // empty means uniform 0.5 over the mask dimension
  double initial_keep_prob = 0.5;
  std::vector<std::size_t> groups;  // Grouped only: group index per mask element
  std::size_t progress_every = 0;   // 0 means one record per data-size steps
  ProgressFn on_progress;
};

template <class M>
concept MaskedModel = requires(M m, const M cm, std::span<const double> x, std::span<const double> y,
                               const MaskVector& z, double s, std::span<double> g,
                               std::span<const double> cg) {
  { cm.mask_dim() } -> std::convertible_to<std::size_t>;
  { cm.param_count() } -> std::convertible_to<std::size_t>;
  { cm.log_likelihood(x, y, z) } -> std::convertible_to<double>;
  cm.accumulate_grad(x, y, z, s, g);
  m.apply_step(s, cg);
  { cm.finite() } -> std::convertible_to<bool>;
};

template <class D>
concept SampleSet = requires(const D d, std::size_t i) {
  { d.size() } -> std::convertible_to<std::size_t>;
  { d.input(i) } -> std::convertible_to<std::span<const double>>;
  { d.target(i) } -> std::convertible_to<std::span<const double>>;
};

namespace detail {

inline void ensure_trainable(std::size_t n_samples, std::size_t batch) {
  if (n_samples == 0) throw std::invalid_argument("train: dataset is empty");
  if (batch == 0) throw std::invalid_argument("train: minibatch size must be positive");
}

template <SampleSet D>
void draw_batch(Rng& rng, const D& data, std::size_t batch, std::vector<std::size_t>& idx) {
  idx.resize(batch);
  for (auto& i : idx) i = rng.index(data.size());
}

/// Mean log-likelihood over the batch; gradient of the mean accumulated
/// into grad (reset first).
template <MaskedModel M, SampleSet D>
double batch_ll_and_grad(const M& model, const D& data, const std::vector<std::size_t>& idx,
                         const MaskVector& z, std::vector<double>& grad) {
  grad.assign(model.param_count(), 0.0);
  const double w = 1.0 / static_cast<double>(idx.size());
  double ll = 0.0;
  for (std::size_t i : idx) {
    ll += model.log_likelihood(data.input(i), data.target(i), z);
    model.accumulate_grad(data.input(i), data.target(i), z, w, grad);
  }
  return ll * w;
}

inline void abort_if_nonfinite(double v, const char* term, std::size_t t) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("train: non-finite ") + term + " at iteration " +
                             std::to_string(t));
  }
}

template <MaskedModel M>
void theta_step(M& model, double eta, std::span<const double> grad, std::size_t t) {
  for (double g : grad) abort_if_nonfinite(g, "model gradient", t);
  model.apply_step(eta, grad);
  if (!model.finite()) {
    throw std::runtime_error("train: non-finite model parameter after update at iteration " +
                             std::to_string(t));
  }
}

class ProgressMeter {
 public:
  ProgressMeter(const TrainConfig& cfg, std::size_t default_every)
      : fn_(cfg.on_progress),
        every_(cfg.progress_every ? cfg.progress_every : std::max<std::size_t>(default_every, 1)) {}

  template <class MeanKeepFn>
  void tick(std::size_t t, double eta, double eps, double ll, MeanKeepFn&& mean_keep) {
    if (!fn_) return;
    ll_sum_ += ll;
    ++count_;
    if ((t + 1) % every_ == 0) {
      fn_({t + 1, eta, eps, ll_sum_ / static_cast<double>(count_), mean_keep()});
      ll_sum_ = 0.0;
      count_ = 0;
    }
  }

 private:
  const ProgressFn& fn_;
  std::size_t every_;
  double ll_sum_ = 0.0;
  std::size_t count_ = 0;
};

inline MaskDistribution initial_mask_distribution(const TrainConfig& cfg, std::size_t m) {
  if (!(cfg.initial_keep_prob > 0.0 && cfg.initial_keep_prob < 1.0)) {
    throw std::invalid_argument("train: initial keep probability must lie strictly inside (0,1)");
  }
  switch (cfg.algorithm) {
    case Algorithm::Uor:
      return MaskDistribution::shared(m, cfg.initial_keep_prob);
    case Algorithm::For: {
      std::vector<double> keep(m, cfg.initial_keep_prob);
      return MaskDistribution::per_feature(keep);
    }
    case Algorithm::Grouped: {
      if (cfg.groups.size() != m) {
        throw std::invalid_argument("train: group assignment length does not match mask dimension");
      }
      std::size_t n_groups = 0;
      for (std::size_t g : cfg.groups) n_groups = std::max(n_groups, g + 1);
      std::vector<double> logits(n_groups, logit(cfg.initial_keep_prob));
      return MaskDistribution::grouped(cfg.groups, std::move(logits));
    }
    default:
      throw std::invalid_argument("train: algorithm does not optimize mask rates");
  }
}

inline PriorMask resolve_prior(const TrainConfig& cfg, std::size_t m) {
  if (cfg.prior.keep_probs.empty()) return PriorMask::uniform(m);
  if (cfg.prior.keep_probs.size() != m) {
    throw std::invalid_argument("train: prior dimension does not match mask dimension");
  }
  cfg.prior.validate();
  return cfg.prior;
}

inline double mean_keep_prob(const MaskDistribution& q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) sum += q.keep_prob(i);
  return sum / static_cast<double>(q.dim());
}

}  // namespace detail

/// Plain SGD with the mask fixed to all ones.
template <MaskedModel M, SampleSet D>
M train_mle(M model, const D& data, const StepSchedule& sched, const TrainConfig& cfg) {
  sched.validate();
  detail::ensure_trainable(data.size(), cfg.minibatch_size);
  Rng rng(cfg.seed);
  const MaskVector ones = MaskVector::ones(model.mask_dim());
  std::vector<std::size_t> idx;
  std::vector<double> grad;
  detail::ProgressMeter meter(cfg, data.size());
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    detail::draw_batch(rng, data, cfg.minibatch_size, idx);
    const double ll = detail::batch_ll_and_grad(model, data, idx, ones, grad);
    detail::theta_step(model, sched.eta(t), grad, t);
    meter.tick(t, sched.eta(t), 0.0, ll, [] { return 1.0; });
  }
  return model;
}

/// Standard dropout: every step draws one i.i.d. Bernoulli(keep) mask shared
/// by the batch, then takes the masked gradient step.
template <MaskedModel M, SampleSet D>
M train_standard_dropout(M model, const D& data, const StepSchedule& sched, const TrainConfig& cfg) {
  sched.validate();
  detail::ensure_trainable(data.size(), cfg.minibatch_size);
  if (!(cfg.fixed_rate > 0.0 && cfg.fixed_rate < 1.0)) {
    throw std::invalid_argument("train_standard_dropout: dropout rate must lie strictly inside (0,1)");
  }
  const double keep = 1.0 - cfg.fixed_rate;
  Rng rng(cfg.seed);
  MaskVector z(model.mask_dim());
  std::vector<std::size_t> idx;
  std::vector<double> grad;
  detail::ProgressMeter meter(cfg, data.size());
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    detail::draw_batch(rng, data, cfg.minibatch_size, idx);
    for (std::size_t i = 0; i < z.size(); ++i) z.bits[i] = rng.uniform() < keep ? 1 : 0;
    const double ll = detail::batch_ll_and_grad(model, data, idx, z, grad);
    detail::theta_step(model, sched.eta(t), grad, t);
    meter.tick(t, sched.eta(t), 0.0, ll, [keep] { return keep; });
  }
  return model;
}

template <MaskedModel M>
struct BayesTrainResult {
  M model;
  MaskDistribution mask;
};

namespace detail {

/// One logit update. The score term multiplies d log q / d rho by the sampled
/// batch log-likelihood (minus the optional moving baseline); the regularizer
/// term is the exact gradient of cross-entropy-with-prior plus entropy,
/// weighted by delta.
inline void rho_step(MaskDistribution& q, const PriorMask& prior, const MaskVector& z, double ll,
                     double baseline, double eps, double delta, std::vector<double>& buf,
                     std::size_t t) {
  const std::vector<double> score = q.score_gradient(z);
  const std::vector<double> reg = q.regularizer_gradient(prior);
  buf.resize(score.size());
  const double coef = ll - baseline;
  for (std::size_t k = 0; k < score.size(); ++k) {
    const double score_term = score[k] * coef;
    abort_if_nonfinite(score_term, "score term", t);
    abort_if_nonfinite(reg[k], "regularizer term", t);
    buf[k] = eps * (score_term + delta * reg[k]);
  }
  q.shift_logits(buf);
  q.clamp_logits();
}

}  // namespace detail

/// Rate-optimizing dropout. Per step: sample a batch and a mask z ~ q, update
/// the model parameters with the masked gradient, then move the logits by
///   eps_t * ( dlogq(z)/drho * [ll - baseline] + delta_t * d(CE + H)/drho )
/// and clamp them. The baseline is an exponential moving average of sampled
/// log-likelihoods and is zero when disabled.
template <MaskedModel M, SampleSet D>
BayesTrainResult<M> train_bayesian_dropout(M model, const D& data, const StepSchedule& sched,
                                           const TrainConfig& cfg) {
  sched.validate();
  detail::ensure_trainable(data.size(), cfg.minibatch_size);
  MaskDistribution q = detail::initial_mask_distribution(cfg, model.mask_dim());
  const PriorMask prior = detail::resolve_prior(cfg, model.mask_dim());
  Rng rng(cfg.seed);
  MaskVector z(model.mask_dim());
  std::vector<std::size_t> idx;
  std::vector<double> grad, rho_buf;
  double baseline = 0.0;
  detail::ProgressMeter meter(cfg, data.size());
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    detail::draw_batch(rng, data, cfg.minibatch_size, idx);
    q.sample_into(rng, z);
    const double ll = detail::batch_ll_and_grad(model, data, idx, z, grad);
    detail::theta_step(model, sched.eta(t), grad, t);
    const double eps = sched.eps(t);
    if (eps > 0.0) {
      detail::rho_step(q, prior, z, ll, cfg.baseline_enabled ? baseline : 0.0, eps,
                       sched.delta_at(t, data.size()), rho_buf, t);
    }
    if (cfg.baseline_enabled) {
      baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * ll;
    }
    meter.tick(t, sched.eta(t), eps, ll, [&q] { return detail::mean_keep_prob(q); });
  }
  return {std::move(model), std::move(q)};
}

struct EmConfig {
  double theta_grad_tol = 1e-3;
  double rho_grad_tol = 1e-3;
  std::size_t max_phase_steps = 0;  // 0 means one data-size sweep per phase
  double ema_decay = 0.9;
};

template <MaskedModel M>
struct EmTrainResult {
  M model;
  MaskDistribution mask;
  std::size_t alternations = 0;
  std::size_t steps = 0;
};

/// Alternating variant: repeat model-only steps until the smoothed gradient
/// magnitude falls under tolerance (or the phase budget runs out), then
/// rate-only steps likewise. Stops when both phases converge immediately or
/// the iteration budget is exhausted.
template <MaskedModel M, SampleSet D>
EmTrainResult<M> train_em_like(M model, const D& data, const StepSchedule& sched,
                               const TrainConfig& cfg, const EmConfig& em = {}) {
  sched.validate();
  detail::ensure_trainable(data.size(), cfg.minibatch_size);
  MaskDistribution q = detail::initial_mask_distribution(cfg, model.mask_dim());
  const PriorMask prior = detail::resolve_prior(cfg, model.mask_dim());
  Rng rng(cfg.seed);
  MaskVector z(model.mask_dim());
  std::vector<std::size_t> idx;
  std::vector<double> grad, rho_buf;
  double baseline = 0.0;
  const std::size_t phase_budget = em.max_phase_steps ? em.max_phase_steps : data.size();
  detail::ProgressMeter meter(cfg, data.size());

  std::size_t t = 0;
  std::size_t alternations = 0;
  const auto inf_norm = [](std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  };

  while (t < cfg.iterations) {
    ++alternations;

    std::size_t theta_steps = 0;
    double ema = -1.0;
    while (t < cfg.iterations && theta_steps < phase_budget) {
      detail::draw_batch(rng, data, cfg.minibatch_size, idx);
      q.sample_into(rng, z);
      const double ll = detail::batch_ll_and_grad(model, data, idx, z, grad);
      detail::theta_step(model, sched.eta(t), grad, t);
      meter.tick(t, sched.eta(t), 0.0, ll, [&q] { return detail::mean_keep_prob(q); });
      ++t;
      ++theta_steps;
      const double g = inf_norm(grad);
      ema = ema < 0.0 ? g : em.ema_decay * ema + (1.0 - em.ema_decay) * g;
      if (ema < em.theta_grad_tol) break;
    }

    std::size_t rho_steps = 0;
    ema = -1.0;
    while (t < cfg.iterations && rho_steps < phase_budget) {
      detail::draw_batch(rng, data, cfg.minibatch_size, idx);
      q.sample_into(rng, z);
      double ll = 0.0;
      const double w = 1.0 / static_cast<double>(idx.size());
      for (std::size_t i : idx) ll += w * model.log_likelihood(data.input(i), data.target(i), z);
      const double eps = sched.eps(t);
      const std::vector<double> score = q.score_gradient(z);
      const std::vector<double> reg = q.regularizer_gradient(prior);
      const double dlt = sched.delta_at(t, data.size());
      const double coef = ll - (cfg.baseline_enabled ? baseline : 0.0);
      rho_buf.resize(score.size());
      for (std::size_t k = 0; k < score.size(); ++k) {
        rho_buf[k] = score[k] * coef + dlt * reg[k];
        detail::abort_if_nonfinite(rho_buf[k], "rate update", t);
      }
      const double g = inf_norm(rho_buf);
      if (eps > 0.0) {
        for (double& v : rho_buf) v *= eps;
        q.shift_logits(rho_buf);
        q.clamp_logits();
      }
      if (cfg.baseline_enabled) baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * ll;
      meter.tick(t, sched.eta(t), eps, ll, [&q] { return detail::mean_keep_prob(q); });
      ++t;
      ++rho_steps;
      ema = ema < 0.0 ? g : em.ema_decay * ema + (1.0 - em.ema_decay) * g;
      if (ema < em.rho_grad_tol) break;
    }

    if (theta_steps <= 1 && rho_steps <= 1) break;
  }
  return {std::move(model), std::move(q), alternations, t};
}

/// The three terms of the variational bound, each by exhaustive enumeration.
struct LowerBoundTerms {
  double expected_ll = 0.0;   // sum_t sum_z q(z) log p(y_t | x_t, z, theta)
  double prior_cross = 0.0;   // sum_z q(z) log p(z)
  double entropy = 0.0;       // -sum_z q(z) log q(z)
  double value() const { return expected_ll + prior_cross + entropy; }
};

template <MaskedModel M, SampleSet D>
LowerBoundTerms lower_bound_terms(const M& model, const D& data, const MaskDistribution& q,
                                  const PriorMask& prior) {
  if (q.dim() > 10) {
    throw std::domain_error("lower_bound_exact: mask dimension too large for enumeration");
  }
  if (q.dim() != model.mask_dim()) {
    throw std::invalid_argument("lower_bound_exact: distribution does not match model mask dimension");
  }
  LowerBoundTerms terms;
  for_each_mask(q.dim(), [&](const MaskVector& z) {
    const double lq = q.log_prob(z);
    const double qz = std::exp(lq);
    double ll = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      ll += model.log_likelihood(data.input(i), data.target(i), z);
    }
    terms.expected_ll += qz * ll;
    terms.prior_cross += qz * prior.log_prob(z);
    terms.entropy -= qz * lq;
  });
  return terms;
}

template <MaskedModel M, SampleSet D>
double lower_bound_exact(const M& model, const D& data, const MaskDistribution& q,
                         const PriorMask& prior) {
  return lower_bound_terms(model, data, q, prior).value();
}

/// log sum_z [prod_t p(y_t|x_t,z,theta)] p(z), via log-sum-exp.
template <MaskedModel M, SampleSet D>
double marginal_log_likelihood_exact(const M& model, const D& data, const PriorMask& prior) {
  if (model.mask_dim() > 10) {
    throw std::domain_error("marginal_log_likelihood_exact: mask dimension too large for enumeration");
  }
  std::vector<double> joint;
  joint.reserve(std::size_t{1} << model.mask_dim());
  for_each_mask(model.mask_dim(), [&](const MaskVector& z) {
    double ll = prior.log_prob(z);
    for (std::size_t i = 0; i < data.size(); ++i) {
      ll += model.log_likelihood(data.input(i), data.target(i), z);
    }
    joint.push_back(ll);
  });
  double max = joint[0];
  for (double v : joint) max = std::max(max, v);
  double sum = 0.0;
  for (double v : joint) sum += std::exp(v - max);
  return max + std::log(sum);
}

}  // namespace bdrop
