#pragma once
// Masked probabilistic models: linear logistic regression and a three-layer
// sigmoid network. Both expose the masked log-likelihood, its exact parameter
// gradient, and the interchangeable prediction rules (exact enumeration,
// Monte Carlo, expected mask, Gaussian pre-activation approximation).

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdrop/mask_distribution.hpp"
#include "bdrop/rng.hpp"
#include "bdrop/text_io.hpp"

namespace bdrop {

/// Exhaustive enumeration is only permitted up to this mask dimension.
inline constexpr std::size_t kMaxEnumerationDim = 20;

namespace detail {

inline void check_dims(std::size_t got, std::size_t want, std::string_view what) {
  if (got != want) {
    std::ostringstream msg;
    msg << what << ": size " << got << " does not match expected " << want;
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace detail

/// p(y=1 | x, z, theta) = logistic(theta' Z x). No bias term by default.
struct LogisticRegressionModel {
  std::vector<double> theta;
  bool with_bias = false;
  double bias = 0.0;

  LogisticRegressionModel() = default;
  explicit LogisticRegressionModel(std::size_t n) : theta(n, 0.0) {}
  explicit LogisticRegressionModel(std::vector<double> weights) : theta(std::move(weights)) {}

  std::size_t dim() const { return theta.size(); }

  double masked_score(std::span<const double> x, const MaskVector& z) const {
    detail::check_dims(x.size(), theta.size(), "LogisticRegressionModel: input");
    detail::check_dims(z.size(), theta.size(), "LogisticRegressionModel: mask");
    double u = with_bias ? bias : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (z[i]) u += theta[i] * x[i];
    }
    return u;
  }

  /// y log s(u) + (1-y) log(1-s(u)), evaluated through log1p for stability.
  double log_likelihood(std::span<const double> x, double y, const MaskVector& z) const {
    const double u = masked_score(x, z);
    return y * log_logistic(u) + (1.0 - y) * log_logistic(-u);
  }

  /// d log p / d theta = (y - s(u)) * (z .* x); bias slot appended when enabled.
  void grad(std::span<const double> x, double y, const MaskVector& z, std::span<double> out) const {
    detail::check_dims(out.size(), param_count(), "LogisticRegressionModel: gradient buffer");
    const double r = y - logistic(masked_score(x, z));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      out[i] = z[i] ? r * x[i] : 0.0;
    }
    if (with_bias) out[theta.size()] = r;
  }

  double predict_prob(std::span<const double> x, const MaskVector& z) const {
    return logistic(masked_score(x, z));
  }

  /// Expected-mask rule: s(sum_i lambda_i theta_i x_i).
  double predict_expected_mask(std::span<const double> x, std::span<const double> keep_probs) const {
    detail::check_dims(x.size(), theta.size(), "predict_expected_mask: input");
    detail::check_dims(keep_probs.size(), theta.size(), "predict_expected_mask: keep probabilities");
    double u = with_bias ? bias : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) u += keep_probs[i] * theta[i] * x[i];
    return logistic(u);
  }

  /// Gaussian rule: the masked score is matched by a Gaussian with
  ///   mu  = sum_i lambda_i theta_i x_i
  ///   s^2 = sum_i lambda_i (1-lambda_i) (theta_i x_i)^2
  /// and the sigmoid integral is approximated by s(mu / sqrt(1 + pi s^2 / 8)).
  double predict_gaussian(std::span<const double> x, std::span<const double> keep_probs) const {
    detail::check_dims(x.size(), theta.size(), "predict_gaussian: input");
    detail::check_dims(keep_probs.size(), theta.size(), "predict_gaussian: keep probabilities");
    double mu = with_bias ? bias : 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double a = theta[i] * x[i];
      mu += keep_probs[i] * a;
      s2 += keep_probs[i] * (1.0 - keep_probs[i]) * a * a;
    }
    return logistic(mu / std::sqrt(1.0 + std::numbers::pi * s2 / 8.0));
  }

  // hooks used by the generic training loops
  std::size_t mask_dim() const { return theta.size(); }
  std::size_t param_count() const { return theta.size() + (with_bias ? 1 : 0); }

  double log_likelihood(std::span<const double> x, std::span<const double> y, const MaskVector& z) const {
    return log_likelihood(x, y[0], z);
  }

  void accumulate_grad(std::span<const double> x, std::span<const double> y, const MaskVector& z,
                       double scale, std::span<double> acc) const {
    detail::check_dims(acc.size(), param_count(), "LogisticRegressionModel: gradient buffer");
    const double r = y[0] - logistic(masked_score(x, z));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (z[i]) acc[i] += scale * r * x[i];
    }
    if (with_bias) acc[theta.size()] += scale * r;
  }

  void apply_step(double eta, std::span<const double> g) {
    detail::check_dims(g.size(), param_count(), "LogisticRegressionModel: step");
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += eta * g[i];
    if (with_bias) bias += eta * g[theta.size()];
  }

  bool finite() const {
    for (double w : theta) {
      if (!std::isfinite(w)) return false;
    }
    return !with_bias || std::isfinite(bias);
  }

  void save(std::ostream& out) const {
    out << "bdrop_model logreg\n";
    out << "dim " << theta.size() << "\n";
    out << "bias " << (with_bias ? 1 : 0);
    if (with_bias) out << ' ' << format_double(bias);
    out << "\n";
    out << "theta";
    for (double w : theta) out << ' ' << format_double(w);
    out << "\n";
  }

  static LogisticRegressionModel load(std::istream& in) {
    std::string header;
    std::getline(in, header);
    if (header != "bdrop_model logreg") {
      throw std::runtime_error("LogisticRegressionModel::load: unrecognized header '" + header + "'");
    }
    std::string word;
    std::size_t n = 0;
    in >> word >> n;
    if (!in || word != "dim") throw std::runtime_error("LogisticRegressionModel::load: expected 'dim'");
    int bias_flag = 0;
    in >> word >> bias_flag;
    if (!in || word != "bias") throw std::runtime_error("LogisticRegressionModel::load: expected 'bias'");
    LogisticRegressionModel m(n);
    if (bias_flag) {
      m.with_bias = true;
      in >> m.bias;
    }
    in >> word;
    if (!in || word != "theta") throw std::runtime_error("LogisticRegressionModel::load: expected 'theta'");
    for (auto& w : m.theta) in >> w;
    if (!in) throw std::runtime_error("LogisticRegressionModel::load: truncated weight list");
    return m;
  }
};

/// h = s(W1 (z1 .* x) + b1), y = s(W2 (z2 .* h) + b2).
/// Parameters live in one flat buffer [W1 | b1 | W2 | b2], row-major matrices,
/// so training steps and gradient checks can treat them uniformly.
class ThreeLayerNet {
 public:
  ThreeLayerNet(std::size_t n_in, std::size_t n_hidden, std::size_t n_out)
      : n_in_(n_in), n_hidden_(n_hidden), n_out_(n_out),
        params_(n_hidden * n_in + n_hidden + n_out * n_hidden + n_out, 0.0) {}

  static ThreeLayerNet random_init(std::size_t n_in, std::size_t n_hidden, std::size_t n_out, Rng& rng) {
    ThreeLayerNet net(n_in, n_hidden, n_out);
    for (double& w : net.params_) w = rng.uniform(-0.1, 0.1);
    return net;
  }

  std::size_t n_in() const { return n_in_; }
  std::size_t n_hidden() const { return n_hidden_; }
  std::size_t n_out() const { return n_out_; }

  std::span<double> w1() { return {params_.data(), n_hidden_ * n_in_}; }
  std::span<double> b1() { return {params_.data() + b1_off(), n_hidden_}; }
  std::span<double> w2() { return {params_.data() + w2_off(), n_out_ * n_hidden_}; }
  std::span<double> b2() { return {params_.data() + b2_off(), n_out_}; }
  std::span<const double> w1() const { return {params_.data(), n_hidden_ * n_in_}; }
  std::span<const double> b1() const { return {params_.data() + b1_off(), n_hidden_}; }
  std::span<const double> w2() const { return {params_.data() + w2_off(), n_out_ * n_hidden_}; }
  std::span<const double> b2() const { return {params_.data() + b2_off(), n_out_}; }

  std::vector<double> forward(std::span<const double> x, const MaskVector& z1, const MaskVector& z2) const {
    detail::check_dims(z1.size(), n_in_, "ThreeLayerNet: input mask");
    detail::check_dims(z2.size(), n_hidden_, "ThreeLayerNet: hidden mask");
    std::vector<double> in_w(n_in_), hid_w(n_hidden_);
    for (std::size_t i = 0; i < n_in_; ++i) in_w[i] = z1[i] ? 1.0 : 0.0;
    for (std::size_t j = 0; j < n_hidden_; ++j) hid_w[j] = z2[j] ? 1.0 : 0.0;
    return forward_weighted(x, in_w, hid_w);
  }

  /// Forward pass with real-valued element weights in place of binary masks;
  /// passing keep-probabilities gives the expected-mask prediction.
  std::vector<double> forward_weighted(std::span<const double> x, std::span<const double> in_weights,
                                       std::span<const double> hidden_weights) const {
    std::vector<double> hidden(n_hidden_), out(n_out_);
    forward_into(x, in_weights, hidden_weights, hidden, out);
    return out;
  }

  /// -||y - f(x; z1, z2)||^2 (squared-error log-likelihood up to a constant).
  double log_likelihood(std::span<const double> x, std::span<const double> y,
                        const MaskVector& z1, const MaskVector& z2) const {
    detail::check_dims(y.size(), n_out_, "ThreeLayerNet: target");
    const std::vector<double> f = forward(x, z1, z2);
    double sq = 0.0;
    for (std::size_t j = 0; j < n_out_; ++j) {
      const double r = y[j] - f[j];
      sq += r * r;
    }
    return -sq;
  }

  /// Exact backpropagation gradient of log_likelihood, same layout as the
  /// parameter buffer. Columns of W1 and W2 hit by a zero mask get zero.
  void grad(std::span<const double> x, std::span<const double> y,
            const MaskVector& z1, const MaskVector& z2, std::span<double> out) const {
    accumulate_grad_impl(x, y, z1, z2, 1.0, out, /*overwrite=*/true);
  }

  // combined-mask hooks: z packs [input bits | hidden bits]
  std::size_t mask_dim() const { return n_in_ + n_hidden_; }
  std::size_t param_count() const { return params_.size(); }

  double log_likelihood(std::span<const double> x, std::span<const double> y, const MaskVector& z) const {
    auto [z1, z2] = split_mask(z);
    return log_likelihood(x, y, z1, z2);
  }

  void accumulate_grad(std::span<const double> x, std::span<const double> y, const MaskVector& z,
                       double scale, std::span<double> acc) const {
    auto [z1, z2] = split_mask(z);
    accumulate_grad_impl(x, y, z1, z2, scale, acc, /*overwrite=*/false);
  }

  void apply_step(double eta, std::span<const double> g) {
    detail::check_dims(g.size(), params_.size(), "ThreeLayerNet: step");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i] += eta * g[i];
  }

  bool finite() const {
    for (double w : params_) {
      if (!std::isfinite(w)) return false;
    }
    return true;
  }

  void save(std::ostream& out) const {
    out << "bdrop_model three_layer_net\n";
    out << "dims " << n_in_ << ' ' << n_hidden_ << ' ' << n_out_ << "\n";
    const char* names[4] = {"w1", "b1", "w2", "b2"};
    const std::span<const double> blocks[4] = {w1(), b1(), w2(), b2()};
    for (int b = 0; b < 4; ++b) {
      out << names[b];
      for (double w : blocks[b]) out << ' ' << format_double(w);
      out << "\n";
    }
  }

  static ThreeLayerNet load(std::istream& in) {
    std::string header;
    std::getline(in, header);
    if (header != "bdrop_model three_layer_net") {
      throw std::runtime_error("ThreeLayerNet::load: unrecognized header '" + header + "'");
    }
    std::string word;
    std::size_t n = 0, m = 0, l = 0;
    in >> word >> n >> m >> l;
    if (!in || word != "dims") throw std::runtime_error("ThreeLayerNet::load: expected 'dims'");
    ThreeLayerNet net(n, m, l);
    const char* names[4] = {"w1", "b1", "w2", "b2"};
    const std::span<double> blocks[4] = {net.w1(), net.b1(), net.w2(), net.b2()};
    for (int b = 0; b < 4; ++b) {
      in >> word;
      if (!in || word != names[b]) {
        throw std::runtime_error(std::string("ThreeLayerNet::load: expected '") + names[b] + "'");
      }
      for (auto& w : blocks[b]) in >> w;
    }
    if (!in) throw std::runtime_error("ThreeLayerNet::load: truncated weight list");
    return net;
  }

 private:
  std::size_t b1_off() const { return n_hidden_ * n_in_; }
  std::size_t w2_off() const { return b1_off() + n_hidden_; }
  std::size_t b2_off() const { return w2_off() + n_out_ * n_hidden_; }

  std::pair<MaskVector, MaskVector> split_mask(const MaskVector& z) const {
    detail::check_dims(z.size(), mask_dim(), "ThreeLayerNet: combined mask");
    MaskVector z1(n_in_), z2(n_hidden_);
    for (std::size_t i = 0; i < n_in_; ++i) z1[i] = z[i];
    for (std::size_t j = 0; j < n_hidden_; ++j) z2[j] = z[n_in_ + j];
    return {std::move(z1), std::move(z2)};
  }

  void forward_into(std::span<const double> x, std::span<const double> in_weights,
                    std::span<const double> hidden_weights,
                    std::span<double> hidden, std::span<double> out) const {
    detail::check_dims(x.size(), n_in_, "ThreeLayerNet: input");
    detail::check_dims(in_weights.size(), n_in_, "ThreeLayerNet: input weights");
    detail::check_dims(hidden_weights.size(), n_hidden_, "ThreeLayerNet: hidden weights");
    const auto W1 = w1();
    const auto B1 = b1();
    const auto W2 = w2();
    const auto B2 = b2();
    for (std::size_t j = 0; j < n_hidden_; ++j) {
      double a = B1[j];
      for (std::size_t i = 0; i < n_in_; ++i) a += W1[j * n_in_ + i] * (in_weights[i] * x[i]);
      hidden[j] = logistic(a);
    }
    for (std::size_t k = 0; k < n_out_; ++k) {
      double a = B2[k];
      for (std::size_t j = 0; j < n_hidden_; ++j) a += W2[k * n_hidden_ + j] * (hidden_weights[j] * hidden[j]);
      out[k] = logistic(a);
    }
  }

  void accumulate_grad_impl(std::span<const double> x, std::span<const double> y,
                            const MaskVector& z1, const MaskVector& z2,
                            double scale, std::span<double> acc, bool overwrite) const {
    detail::check_dims(acc.size(), params_.size(), "ThreeLayerNet: gradient buffer");
    detail::check_dims(y.size(), n_out_, "ThreeLayerNet: target");
    detail::check_dims(z1.size(), n_in_, "ThreeLayerNet: input mask");
    detail::check_dims(z2.size(), n_hidden_, "ThreeLayerNet: hidden mask");
    if (overwrite) {
      for (double& g : acc) g = 0.0;
    }

    std::vector<double> in_w(n_in_), hid_w(n_hidden_);
    for (std::size_t i = 0; i < n_in_; ++i) in_w[i] = z1[i] ? 1.0 : 0.0;
    for (std::size_t j = 0; j < n_hidden_; ++j) hid_w[j] = z2[j] ? 1.0 : 0.0;
    std::vector<double> hidden(n_hidden_), out(n_out_);
    forward_into(x, in_w, hid_w, hidden, out);

    const auto W2 = w2();
    // output layer: d L / d a2_k with L = -sum (y - f)^2
    std::vector<double> d2(n_out_);
    for (std::size_t k = 0; k < n_out_; ++k) {
      d2[k] = 2.0 * (y[k] - out[k]) * out[k] * (1.0 - out[k]);
    }
    for (std::size_t k = 0; k < n_out_; ++k) {
      for (std::size_t j = 0; j < n_hidden_; ++j) {
        if (z2[j]) acc[w2_off() + k * n_hidden_ + j] += scale * d2[k] * hidden[j];
      }
      acc[b2_off() + k] += scale * d2[k];
    }
    // hidden layer
    for (std::size_t j = 0; j < n_hidden_; ++j) {
      if (!z2[j]) continue;  // dropped unit: no signal flows back
      double dh = 0.0;
      for (std::size_t k = 0; k < n_out_; ++k) dh += d2[k] * W2[k * n_hidden_ + j];
      const double d1 = dh * hidden[j] * (1.0 - hidden[j]);
      for (std::size_t i = 0; i < n_in_; ++i) {
        if (z1[i]) acc[j * n_in_ + i] += scale * d1 * x[i];
      }
      acc[b1_off() + j] += scale * d1;
    }
  }

  std::size_t n_in_, n_hidden_, n_out_;
  std::vector<double> params_;
};

/// sum over all 2^m masks of q(z) * fn(z).
template <class F>
double expectation_over_masks(const MaskDistribution& q, F&& fn) {
  double acc = 0.0;
  for_each_mask(q.dim(), [&](const MaskVector& z) { acc += std::exp(q.log_prob(z)) * fn(z); });
  return acc;
}

/// Mean of fn over n_samples masks drawn from q.
template <class F>
double mc_expectation(const MaskDistribution& q, F&& fn, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw std::invalid_argument("mc_expectation: n_samples must be positive");
  double acc = 0.0;
  MaskVector z(q.dim());
  for (std::size_t s = 0; s < n_samples; ++s) {
    q.sample_into(rng, z);
    acc += fn(static_cast<const MaskVector&>(z));
  }
  return acc / static_cast<double>(n_samples);
}

/// Exact posterior-style average prediction; the reference the cheaper rules
/// are judged against.
inline double predict_enumerate(const LogisticRegressionModel& model, std::span<const double> x,
                                const MaskDistribution& q) {
  if (q.dim() > kMaxEnumerationDim) {
    throw std::domain_error("predict_enumerate: mask dimension exceeds enumeration limit");
  }
  detail::check_dims(q.dim(), model.dim(), "predict_enumerate: distribution");
  return expectation_over_masks(q, [&](const MaskVector& z) { return model.predict_prob(x, z); });
}

inline double predict_mc(const LogisticRegressionModel& model, std::span<const double> x,
                         const MaskDistribution& q, std::size_t n_samples, Rng& rng) {
  detail::check_dims(q.dim(), model.dim(), "predict_mc: distribution");
  return mc_expectation(q, [&](const MaskVector& z) { return model.predict_prob(x, z); }, n_samples, rng);
}

/// How a trained model turns keep-probabilities into a test-time probability.
struct PredictionVariant {
  enum class Kind { ExactEnumeration, MonteCarlo, ExpectedMask, GaussianApprox };

  Kind kind = Kind::ExpectedMask;
  std::vector<double> keep_probs;  // empty means all ones
  std::size_t n_samples = 0;       // MonteCarlo only
  std::uint64_t seed = 0;          // MonteCarlo only
  std::string label = "expected_mask";

  static PredictionVariant plain() { return {Kind::ExpectedMask, {}, 0, 0, "plain"}; }
  static PredictionVariant expected_mask(std::vector<double> keep) {
    return {Kind::ExpectedMask, std::move(keep), 0, 0, "expected_mask"};
  }
  static PredictionVariant gaussian(std::vector<double> keep) {
    return {Kind::GaussianApprox, std::move(keep), 0, 0, "gaussian"};
  }
  static PredictionVariant enumerate(std::vector<double> keep) {
    return {Kind::ExactEnumeration, std::move(keep), 0, 0, "enumerate"};
  }
  static PredictionVariant monte_carlo(std::vector<double> keep, std::size_t n, std::uint64_t seed) {
    return {Kind::MonteCarlo, std::move(keep), n, seed, "monte_carlo"};
  }
};

}  // namespace bdrop
