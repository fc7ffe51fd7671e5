#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "bdrop/models.hpp"
#include "bdrop/synthetic_data.hpp"
#include "bdrop/training.hpp"
#include "oracles.hpp"

using namespace bdrop;

namespace {

struct ToyData {
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;

  std::size_t size() const { return ys.size(); }
  std::span<const double> input(std::size_t i) const { return xs[i]; }
  std::span<const double> target(std::size_t i) const { return {&ys[i], 1}; }
};

ToyData random_toy(std::size_t n_samples, std::size_t n_features, Rng& rng) {
  ToyData d;
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::vector<double> x(n_features);
    for (auto& v : x) v = rng.uniform(-1.5, 1.5);
    d.xs.push_back(std::move(x));
    d.ys.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  }
  return d;
}

double dataset_ll(const LogisticRegressionModel& m, const ToyData& d) {
  double ll = 0.0;
  const MaskVector ones = MaskVector::ones(m.dim());
  for (std::size_t i = 0; i < d.size(); ++i) ll += m.log_likelihood(d.xs[i], d.ys[i], ones);
  return ll / double(d.size());
}

// expectation over data index and mask of score(z) * log-likelihood, by
// exhaustive enumeration
std::vector<double> expected_score_term(const LogisticRegressionModel& m, const ToyData& d,
                                        const MaskDistribution& q) {
  std::vector<double> acc(q.param_count(), 0.0);
  const double wt = 1.0 / double(d.size());
  oracle::each_mask(q.dim(), [&](const MaskVector& z) {
    const double qz = std::exp(q.log_prob(z));
    const auto score = q.score_gradient(z);
    double mean_ll = 0.0;
    for (std::size_t t = 0; t < d.size(); ++t) mean_ll += wt * m.log_likelihood(d.xs[t], d.ys[t], z);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += qz * score[k] * mean_ll;
  });
  return acc;
}

// (1/T) sum_t sum_z q(z|rho) log p(y_t|x_t,z,theta) as a function of the logits
double mean_expected_ll(const LogisticRegressionModel& m, const ToyData& d,
                        std::span<const double> logits) {
  auto q = MaskDistribution::per_feature_logits({logits.begin(), logits.end()});
  double acc = 0.0;
  const double wt = 1.0 / double(d.size());
  oracle::each_mask(q.dim(), [&](const MaskVector& z) {
    const double qz = std::exp(q.log_prob(z));
    for (std::size_t t = 0; t < d.size(); ++t) {
      acc += qz * wt * m.log_likelihood(d.xs[t], d.ys[t], z);
    }
  });
  return acc;
}

// full posterior over masks, enumerated with the naive likelihood formula
std::vector<double> posterior_table(const LogisticRegressionModel& m, const ToyData& d,
                                    const PriorMask& prior) {
  std::vector<double> log_joint;
  oracle::each_mask(m.dim(), [&](const MaskVector& z) {
    double lj = prior.log_prob(z);
    for (std::size_t t = 0; t < d.size(); ++t) lj += oracle::logreg_ll(m.theta, d.xs[t], d.ys[t], z);
    log_joint.push_back(lj);
  });
  double mx = log_joint[0];
  for (double v : log_joint) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : log_joint) total += std::exp(v - mx);
  std::vector<double> post(log_joint.size());
  for (std::size_t i = 0; i < post.size(); ++i) post[i] = std::exp(log_joint[i] - mx) / total;
  return post;
}

}  // namespace

TEST_CASE("step schedules are positive and strictly decreasing") {
  StepSchedule s{0.01, 1000.0, 0.001, 10000.0, DeltaMode::Constant, 1e-3};
  s.validate();
  for (std::size_t t = 0; t < 200; ++t) {
    CHECK(s.eta(t) > 0.0);
    CHECK(s.eps(t) > 0.0);
    CHECK(s.eta(t + 1) < s.eta(t));
    CHECK(s.eps(t + 1) < s.eps(t));
  }
  CHECK(s.delta_at(17, 2000) == 1e-3);
  StepSchedule def;
  def.delta.reset();
  CHECK(def.delta_at(0, 2000) == doctest::Approx(1.0 / 2000.0).epsilon(1e-15));
  StepSchedule one_over_t = s;
  one_over_t.delta_mode = DeltaMode::OneOverT;
  CHECK(one_over_t.delta_at(0, 2000) == 1.0);
  CHECK(one_over_t.delta_at(10, 2000) == doctest::Approx(0.1).epsilon(1e-15));

  StepSchedule bad = s;
  bad.a = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.c = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("train_mle: zero iterations, improving likelihood, bitwise determinism") {
  SUBCASE("zero iterations returns the initial model") {
    ToyData d{{{1.0, 2.0}}, {1.0}};
    TrainConfig cfg;
    cfg.iterations = 0;
    const auto m = train_mle(LogisticRegressionModel(2), d, StepSchedule{}, cfg);
    for (double w : m.theta) CHECK(w == 0.0);
  }
  SUBCASE("two-point separable set: likelihood rises epoch over epoch") {
    ToyData d{{{1.0, 0.5}, {-1.0, -0.5}}, {1.0, 0.0}};
    StepSchedule sched{0.5, 1000.0, 0.0, 1000.0, DeltaMode::Constant, std::nullopt};
    double prev = dataset_ll(LogisticRegressionModel(2), d);
    for (std::size_t epochs = 1; epochs <= 5; ++epochs) {
      TrainConfig cfg;
      cfg.iterations = epochs * 50;
      cfg.seed = 7;
      const auto m = train_mle(LogisticRegressionModel(2), d, sched, cfg);
      const double ll = dataset_ll(m, d);
      CHECK(ll > prev);
      prev = ll;
    }
  }
  SUBCASE("identical seeds give bit-identical weights") {
    Rng rng(70);
    const auto d = random_toy(30, 5, rng);
    TrainConfig cfg;
    cfg.iterations = 500;
    cfg.seed = 1234;
    const auto m1 = train_mle(LogisticRegressionModel(5), d, StepSchedule{}, cfg);
    const auto m2 = train_mle(LogisticRegressionModel(5), d, StepSchedule{}, cfg);
    CHECK(m1.theta == m2.theta);
  }
}

TEST_CASE("train_standard_dropout validates the rate and matches the fixed-mask gradient in expectation") {
  Rng rng(90);
  const auto d = random_toy(6, 5, rng);
  SUBCASE("rate bounds") {
    TrainConfig cfg;
    cfg.iterations = 1;
    cfg.fixed_rate = 0.0;
    CHECK_THROWS_AS(train_standard_dropout(LogisticRegressionModel(5), d, StepSchedule{}, cfg),
                    std::invalid_argument);
    cfg.fixed_rate = 1.0;
    CHECK_THROWS_AS(train_standard_dropout(LogisticRegressionModel(5), d, StepSchedule{}, cfg),
                    std::invalid_argument);
  }
  SUBCASE("expected single-step update equals the gradient of the expected log-likelihood") {
    // E over sample and mask of the masked gradient must equal
    // d/dtheta (1/T) sum_t sum_z q(z) log p(y_t|x_t,z,theta)
    LogisticRegressionModel m(std::vector<double>{0.3, -0.7, 0.2, 0.9, -0.1});
    const double keep = 0.5;
    auto q = MaskDistribution::per_feature(std::vector<double>(5, keep));
    std::vector<double> expected_grad(5, 0.0);
    const double wt = 1.0 / double(d.size());
    oracle::each_mask(5, [&](const MaskVector& z) {
      const double qz = std::exp(q.log_prob(z));
      for (std::size_t t = 0; t < d.size(); ++t) {
        std::vector<double> g(5);
        m.grad(d.xs[t], d.ys[t], z, g);
        for (std::size_t i = 0; i < 5; ++i) expected_grad[i] += qz * wt * g[i];
      }
    });
    const auto fd = oracle::central_diff(
        [&](std::span<const double> th) {
          LogisticRegressionModel mm(std::vector<double>(th.begin(), th.end()));
          double acc = 0.0;
          oracle::each_mask(5, [&](const MaskVector& z) {
            const double qz = std::exp(q.log_prob(z));
            for (std::size_t t = 0; t < d.size(); ++t) {
              acc += qz * wt * mm.log_likelihood(d.xs[t], d.ys[t], z);
            }
          });
          return acc;
        },
        m.theta, 1e-5);
    CHECK(oracle::vec_rel_err(expected_grad, fd) < 1e-5);
  }
}

TEST_CASE("train_bayesian_dropout with frozen rates reproduces standard dropout bitwise") {
  Rng rng(41);
  const auto d = random_toy(25, 6, rng);
  StepSchedule sched{0.05, 1000.0, 0.0, 1000.0, DeltaMode::Constant, std::nullopt};

  TrainConfig fixed_cfg;
  fixed_cfg.algorithm = Algorithm::FixedDropout;
  fixed_cfg.iterations = 300;
  fixed_cfg.seed = 99;
  fixed_cfg.fixed_rate = 0.5;
  const auto fixed = train_standard_dropout(LogisticRegressionModel(6), d, sched, fixed_cfg);

  TrainConfig bayes_cfg = fixed_cfg;
  bayes_cfg.algorithm = Algorithm::For;
  bayes_cfg.initial_keep_prob = 0.5;
  const auto bayes = train_bayesian_dropout(LogisticRegressionModel(6), d, sched, bayes_cfg);

  CHECK(bayes.model.theta == fixed.theta);
  for (std::size_t i = 0; i < 6; ++i) CHECK(bayes.mask.keep_prob(i) == 0.5);
}

TEST_CASE("expected rate update vanishes exactly where the bound is stationary (m = 1)") {
  // single feature, tiny data: the zero of the expected logit update must
  // match the zero of the enumerated d/drho of F within 1e-6
  ToyData d{{{2.0}, {2.0}, {1.5}}, {1.0, 0.0, 0.0}};
  LogisticRegressionModel m(std::vector<double>{1.0});
  const PriorMask prior = PriorMask::uniform(1, 0.5);
  const double delta = 1.0 / double(d.size());

  const auto expected_update = [&](double rho) {
    auto q = MaskDistribution::per_feature_logits({rho});
    const auto score_term = expected_score_term(m, d, q);
    const auto reg = q.regularizer_gradient(prior);
    return score_term[0] + delta * reg[0];
  };
  const auto bound_grad = [&](double rho) {
    // d/drho of [ (1/T) sum_t E_q ll + delta * (CE + H) ] by central differences
    const double h = 1e-6;
    const auto value = [&](double r) {
      auto q = MaskDistribution::per_feature_logits({r});
      return mean_expected_ll(m, d, q.logits()) +
             delta * (q.cross_entropy_with_prior(prior) + q.entropy());
    };
    return (value(rho + h) - value(rho - h)) / (2.0 * h);
  };

  const auto bisect = [](const std::function<double(double)>& f, double lo, double hi) {
    double flo = f(lo);
    REQUIRE(flo * f(hi) < 0.0);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double fm = f(mid);
      if (flo * fm <= 0.0) {
        hi = mid;
      } else {
        lo = mid;
        flo = fm;
      }
    }
    return 0.5 * (lo + hi);
  };

  const double root_update = bisect(expected_update, -8.0, 8.0);
  const double root_bound = bisect(bound_grad, -8.0, 8.0);
  CHECK(std::abs(root_update - root_bound) < 1e-6);
}

TEST_CASE("score term expectation equals the rate gradient of the expected log-likelihood") {
  Rng rng(4242);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m_dim = 6;
    const auto d = random_toy(4, m_dim, rng);
    LogisticRegressionModel m(m_dim);
    for (auto& w : m.theta) w = rng.uniform(-1.0, 1.0);
    std::vector<double> logits(m_dim);
    for (auto& r : logits) r = rng.uniform(-1.5, 1.5);
    auto q = MaskDistribution::per_feature_logits(logits);

    const auto analytic = expected_score_term(m, d, q);
    const auto fd = oracle::central_diff(
        [&](std::span<const double> rho) { return mean_expected_ll(m, d, rho); }, logits, 1e-5);
    CHECK(oracle::vec_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("a constant baseline leaves the expected update untouched") {
  Rng rng(5150);
  const std::size_t m_dim = 7;
  std::vector<double> keep(m_dim);
  for (auto& p : keep) p = rng.uniform(0.15, 0.85);
  auto q = MaskDistribution::per_feature(keep);
  for (double c : {0.5, -3.0, 100.0}) {
    std::vector<double> drift(m_dim, 0.0);
    oracle::each_mask(m_dim, [&](const MaskVector& z) {
      const double qz = std::exp(q.log_prob(z));
      const auto score = q.score_gradient(z);
      for (std::size_t k = 0; k < m_dim; ++k) drift[k] += qz * score[k] * c;
    });
    for (double v : drift) CHECK(std::abs(v) < 1e-10);
  }
}

TEST_CASE("baseline-enabled training stays finite and deterministic") {
  Rng rng(8888);
  const auto d = random_toy(40, 4, rng);
  StepSchedule sched{0.05, 1000.0, 0.01, 10000.0, DeltaMode::Constant, std::nullopt};
  TrainConfig cfg;
  cfg.algorithm = Algorithm::For;
  cfg.iterations = 800;
  cfg.seed = 31;
  cfg.baseline_enabled = true;
  const auto r1 = train_bayesian_dropout(LogisticRegressionModel(4), d, sched, cfg);
  const auto r2 = train_bayesian_dropout(LogisticRegressionModel(4), d, sched, cfg);
  CHECK(r1.model.theta == r2.model.theta);
  for (std::size_t k = 0; k < 4; ++k) CHECK(r1.mask.logits()[k] == r2.mask.logits()[k]);
  CHECK(r1.model.finite());
}

TEST_CASE("bayesian dropout on block-structured data pushes the shared rate toward zero") {
  // a strong informative block and pure noise: the shared keep-probability
  // should rise toward one, i.e. the reported dropout rate toward zero
  DataConfig dc;
  dc.n_informative = 10;
  dc.n_noise = 40;
  dc.mean_shift = 0.3;
  dc.n_train = 300;
  dc.n_valid = 1;
  dc.n_test = 1;
  dc.seed = 2718;
  const auto data = generate(dc);

  StepSchedule sched{0.01, 10000.0, 0.01, 100000.0, DeltaMode::Constant, 1.0 / 300.0};
  TrainConfig cfg;
  cfg.algorithm = Algorithm::Uor;
  cfg.iterations = 9000;
  cfg.seed = 5;
  const auto r = train_bayesian_dropout(LogisticRegressionModel(50), data.train, sched, cfg);
  const double dropout_rate = 1.0 - r.mask.keep_prob(0);
  CHECK(dropout_rate <= 0.1);
}

TEST_CASE("grouped training ties rates within groups") {
  Rng rng(606);
  const auto d = random_toy(30, 6, rng);
  StepSchedule sched{0.05, 1000.0, 0.02, 10000.0, DeltaMode::Constant, std::nullopt};
  TrainConfig cfg;
  cfg.algorithm = Algorithm::Grouped;
  cfg.iterations = 400;
  cfg.seed = 17;
  cfg.groups = {0, 0, 0, 1, 1, 1};
  const auto r = train_bayesian_dropout(LogisticRegressionModel(6), d, sched, cfg);
  CHECK(r.mask.keep_prob(0) == r.mask.keep_prob(1));
  CHECK(r.mask.keep_prob(0) == r.mask.keep_prob(2));
  CHECK(r.mask.keep_prob(3) == r.mask.keep_prob(5));
  CHECK(r.mask.param_count() == 2);

  cfg.groups = {0, 0, 0};  // wrong length
  CHECK_THROWS_AS(train_bayesian_dropout(LogisticRegressionModel(6), d, sched, cfg),
                  std::invalid_argument);
}

TEST_CASE("lower bound: prior fixed point, bound with exact KL slack, tightness at the posterior") {
  Rng rng(1618);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m_dim = 5;
    const auto d = random_toy(3, m_dim, rng);
    LogisticRegressionModel m(m_dim);
    for (auto& w : m.theta) w = rng.uniform(-1.2, 1.2);
    std::vector<double> keep(m_dim), pvec(m_dim);
    for (auto& v : keep) v = rng.uniform(0.1, 0.9);
    for (auto& v : pvec) v = rng.uniform(0.1, 0.9);
    auto q = MaskDistribution::per_feature(keep);
    const PriorMask prior{pvec};

    const double f = lower_bound_exact(m, d, q, prior);
    const double ml = marginal_log_likelihood_exact(m, d, prior);
    CHECK(f <= ml + 1e-12);

    // slack equals KL(q || posterior), posterior enumerated independently
    const auto post = posterior_table(m, d, prior);
    double kl = 0.0;
    std::size_t code = 0;
    oracle::each_mask(m_dim, [&](const MaskVector& z) {
      const double qz = std::exp(q.log_prob(z));
      kl += qz * (q.log_prob(z) - std::log(post[code]));
      ++code;
    });
    CHECK(std::abs((ml - f) - kl) < 1e-9);

    // plugging the posterior itself into the bound closes the gap
    double f_at_posterior = 0.0;
    code = 0;
    oracle::each_mask(m_dim, [&](const MaskVector& z) {
      double ll = 0.0;
      for (std::size_t t = 0; t < d.size(); ++t) ll += m.log_likelihood(d.xs[t], d.ys[t], z);
      f_at_posterior += post[code] * (ll + prior.log_prob(z) - std::log(post[code]));
      ++code;
    });
    CHECK(std::abs(f_at_posterior - ml) < 1e-9);
  }

  SUBCASE("q equal to the prior zeroes the last two terms") {
    const std::size_t m_dim = 4;
    const auto d = random_toy(2, m_dim, rng);
    LogisticRegressionModel m(m_dim);
    for (auto& w : m.theta) w = rng.uniform(-1.0, 1.0);
    std::vector<double> keep{0.3, 0.6, 0.45, 0.8};
    auto q = MaskDistribution::per_feature(keep);
    std::vector<double> pexact(m_dim);
    for (std::size_t i = 0; i < m_dim; ++i) pexact[i] = q.keep_prob(i);
    const auto terms = lower_bound_terms(m, d, q, PriorMask{pexact});
    CHECK(std::abs(terms.prior_cross + terms.entropy) < 1e-12);
  }
  SUBCASE("dimension limit enforced") {
    ToyData d{{std::vector<double>(11, 0.0)}, {1.0}};
    LogisticRegressionModel m(11);
    CHECK_THROWS_AS(lower_bound_exact(m, d, MaskDistribution::shared(11, 0.5), PriorMask::uniform(11)),
                    std::domain_error);
    CHECK_THROWS_AS(marginal_log_likelihood_exact(m, d, PriorMask::uniform(11)), std::domain_error);
  }
}

TEST_CASE("marginal log-likelihood: forced mask, hand enumeration, order invariance") {
  SUBCASE("a prior pinned near one mask returns that submodel's likelihood") {
    LogisticRegressionModel m(std::vector<double>{0.8, -0.5});
    ToyData d{{{1.0, 2.0}, {-1.0, 0.5}}, {1.0, 0.0}};
    PriorMask prior{{1.0 - 1e-14, 1e-14}};  // forces z = (1, 0)
    MaskVector z(2);
    z[0] = 1;
    double direct = 0.0;
    for (std::size_t t = 0; t < d.size(); ++t) direct += m.log_likelihood(d.xs[t], d.ys[t], z);
    CHECK(marginal_log_likelihood_exact(m, d, prior) == doctest::Approx(direct).epsilon(1e-9));
  }
  SUBCASE("m = 2 four-term hand enumeration on one sample") {
    LogisticRegressionModel m(std::vector<double>{1.0, -1.0});
    ToyData d{{{2.0, 1.0}}, {1.0}};
    PriorMask prior{{0.7, 0.4}};
    const double p00 = 0.3 * 0.6 * oracle::sigmoid(0.0);
    const double p10 = 0.7 * 0.6 * oracle::sigmoid(2.0);
    const double p01 = 0.3 * 0.4 * oracle::sigmoid(-1.0);
    const double p11 = 0.7 * 0.4 * oracle::sigmoid(1.0);
    CHECK(marginal_log_likelihood_exact(m, d, prior) ==
          doctest::Approx(std::log(p00 + p10 + p01 + p11)).epsilon(1e-12));
  }
  SUBCASE("reordering the dataset changes nothing") {
    Rng rng(33);
    const std::size_t m_dim = 4;
    auto d = random_toy(5, m_dim, rng);
    LogisticRegressionModel m(m_dim);
    for (auto& w : m.theta) w = rng.uniform(-1.0, 1.0);
    const PriorMask prior = PriorMask::uniform(m_dim, 0.5);
    const double base = marginal_log_likelihood_exact(m, d, prior);
    ToyData reversed;
    for (std::size_t i = d.size(); i-- > 0;) {
      reversed.xs.push_back(d.xs[i]);
      reversed.ys.push_back(d.ys[i]);
    }
    CHECK(marginal_log_likelihood_exact(m, reversed, prior) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("train_em_like: single alternation under unattainable thresholds, bound improves, deterministic") {
  Rng rng(2020);
  const auto d = random_toy(40, 4, rng);
  StepSchedule sched{0.1, 1000.0, 0.05, 10000.0, DeltaMode::Constant, std::nullopt};
  TrainConfig cfg;
  cfg.algorithm = Algorithm::For;
  cfg.iterations = 4000;
  cfg.seed = 12;

  SUBCASE("unattainably high tolerances collapse to one alternation") {
    EmConfig em;
    em.theta_grad_tol = 1e300;
    em.rho_grad_tol = 1e300;
    const auto r = train_em_like(LogisticRegressionModel(4), d, sched, cfg, em);
    CHECK(r.alternations == 1);
    CHECK(r.steps == 2);
  }
  SUBCASE("the enumerated bound does not decrease") {
    const PriorMask prior = PriorMask::uniform(4, 0.5);
    LogisticRegressionModel init(4);
    const auto q0 = MaskDistribution::per_feature(std::vector<double>(4, 0.5));
    const double f0 = lower_bound_exact(init, d, q0, prior);
    EmConfig em;
    em.theta_grad_tol = 1e-4;
    em.rho_grad_tol = 1e-4;
    em.max_phase_steps = 200;
    const auto r = train_em_like(LogisticRegressionModel(4), d, sched, cfg, em);
    const double f1 = lower_bound_exact(r.model, d, r.mask, prior);
    CHECK(f1 >= f0);
  }
  SUBCASE("fixed seed reproduces the trajectory") {
    const auto r1 = train_em_like(LogisticRegressionModel(4), d, sched, cfg);
    const auto r2 = train_em_like(LogisticRegressionModel(4), d, sched, cfg);
    CHECK(r1.model.theta == r2.model.theta);
    CHECK(r1.steps == r2.steps);
    for (std::size_t k = 0; k < 4; ++k) CHECK(r1.mask.logits()[k] == r2.mask.logits()[k]);
  }
}

TEST_CASE("non-finite updates abort with a diagnostic") {
  SUBCASE("model parameters overflow") {
    ToyData d{{{1e308}}, {1.0}};
    StepSchedule sched{10.0, 1000.0, 0.0, 1000.0, DeltaMode::Constant, std::nullopt};
    TrainConfig cfg;
    cfg.iterations = 10;
    CHECK_THROWS_WITH_AS(train_mle(LogisticRegressionModel(1), d, sched, cfg),
                         doctest::Contains("non-finite"), std::runtime_error);
  }
  SUBCASE("score term blows up when the likelihood is degenerate") {
    ToyData d{{{10.0}}, {0.0}};
    StepSchedule sched{0.01, 1000.0, 0.01, 1000.0, DeltaMode::Constant, std::nullopt};
    TrainConfig cfg;
    cfg.algorithm = Algorithm::For;
    cfg.iterations = 10;
    LogisticRegressionModel m(std::vector<double>{1e308});
    CHECK_THROWS_WITH_AS(train_bayesian_dropout(std::move(m), d, sched, cfg),
                         doctest::Contains("score term"), std::runtime_error);
  }
}

TEST_CASE("progress records expose iteration, step sizes, likelihood and mean keep") {
  Rng rng(3131);
  const auto d = random_toy(20, 3, rng);
  std::vector<ProgressRecord> records;
  StepSchedule sched{0.05, 1000.0, 0.02, 10000.0, DeltaMode::Constant, std::nullopt};
  TrainConfig cfg;
  cfg.algorithm = Algorithm::For;
  cfg.iterations = 100;
  cfg.seed = 8;
  cfg.progress_every = 20;
  cfg.on_progress = [&](const ProgressRecord& r) { records.push_back(r); };
  train_bayesian_dropout(LogisticRegressionModel(3), d, sched, cfg);
  REQUIRE(records.size() == 5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].iteration == (i + 1) * 20);
    CHECK(records[i].eta > 0.0);
    CHECK(records[i].eps > 0.0);
    CHECK(records[i].train_ll < 0.0);
    CHECK(records[i].mean_keep > 0.0);
    CHECK(records[i].mean_keep < 1.0);
  }
}

TEST_CASE("the generic loops also train the three-layer net") {
  struct RegData {
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> ys;
    std::size_t size() const { return ys.size(); }
    std::span<const double> input(std::size_t i) const { return xs[i]; }
    std::span<const double> target(std::size_t i) const { return ys[i]; }
  };
  Rng rng(515);
  RegData d;
  for (int s = 0; s < 30; ++s) {
    std::vector<double> x{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    d.ys.push_back({x[0] > 0.0 ? 0.8 : 0.2});
    d.xs.push_back(std::move(x));
  }
  auto net = ThreeLayerNet::random_init(2, 4, 1, rng);
  const auto mse = [&](const ThreeLayerNet& n) {
    double acc = 0.0;
    const MaskVector z1 = MaskVector::ones(2), z2 = MaskVector::ones(4);
    for (std::size_t i = 0; i < d.size(); ++i) acc -= n.log_likelihood(d.xs[i], d.ys[i], z1, z2);
    return acc / double(d.size());
  };
  const double before = mse(net);
  StepSchedule sched{0.5, 10000.0, 0.0, 1000.0, DeltaMode::Constant, std::nullopt};
  TrainConfig cfg;
  cfg.iterations = 3000;
  cfg.seed = 202;
  const auto trained = train_mle(std::move(net), d, sched, cfg);
  CHECK(mse(trained) < before);

  TrainConfig drop_cfg = cfg;
  drop_cfg.algorithm = Algorithm::FixedDropout;
  drop_cfg.fixed_rate = 0.5;
  drop_cfg.iterations = 500;
  const auto dropped = train_standard_dropout(ThreeLayerNet::random_init(2, 4, 1, rng), d, sched, drop_cfg);
  CHECK(dropped.finite());
}
