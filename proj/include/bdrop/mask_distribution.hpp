#pragma once
// Independent Bernoulli distributions over binary masks.
//
// A mask z in {0,1}^m selects a submodel of a full architecture; q(z) is the
// product of per-element Bernoulli factors with keep-probability
// lambda_i = logistic(rho_{g(i)}). The unconstrained logits rho are the
// trained parameters: they keep lambda strictly inside (0,1) without any
// projection step and reduce the score function d log q / d rho to a sum of
// (z_i - lambda_i) terms. Three parameter-tying modes are supported: one
// shared logit, one logit per element, or one logit per named group.
//
// The reported "dropout rate" of element i is 1 - lambda_i throughout.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdrop/rng.hpp"

namespace bdrop {

/// Logits are clamped to this magnitude after every training update; the
/// corresponding keep-probabilities stay inside ~[6e-6, 1-6e-6], which keeps
/// every entropy term finite while still letting a rate reach zero to
/// machine-visible precision.
inline constexpr double kLogitClamp = 12.0;

inline double logistic(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

/// log(logistic(t)), stable for any finite t.
inline double log_logistic(double t) {
  return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Binary inclusion vector: 1 = kept, 0 = dropped.
struct MaskVector {
  std::vector<std::uint8_t> bits;

  MaskVector() = default;
  explicit MaskVector(std::size_t m, std::uint8_t fill = 0) : bits(m, fill) {}
  static MaskVector ones(std::size_t m) { return MaskVector(m, 1); }
  static MaskVector zeros(std::size_t m) { return MaskVector(m, 0); }

  std::size_t size() const { return bits.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits[i]; }
  std::uint8_t& operator[](std::size_t i) { return bits[i]; }
  bool operator==(const MaskVector&) const = default;
};

/// Fixed keep-probabilities p(z) used as the mask prior.
struct PriorMask {
  std::vector<double> keep_probs;

  static PriorMask uniform(std::size_t dim, double p = 0.5) {
    PriorMask prior;
    prior.keep_probs.assign(dim, p);
    prior.validate();
    return prior;
  }

  void validate() const {
    for (double p : keep_probs) {
      if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("PriorMask: keep probabilities must lie strictly inside (0,1)");
      }
    }
  }

  double log_prob(const MaskVector& z) const {
    if (z.size() != keep_probs.size()) {
      throw std::invalid_argument("PriorMask::log_prob: mask length does not match prior dimension");
    }
    double lp = 0.0;
    for (std::size_t i = 0; i < keep_probs.size(); ++i) {
      lp += z[i] ? std::log(keep_probs[i]) : std::log1p(-keep_probs[i]);
    }
    return lp;
  }
};

enum class MaskMode { Shared, PerFeature, Grouped };

inline std::string_view to_string(MaskMode m) {
  switch (m) {
    case MaskMode::Shared: return "shared";
    case MaskMode::PerFeature: return "per_feature";
    case MaskMode::Grouped: return "grouped";
  }
  return "?";
}

class MaskDistribution {
 public:
  static MaskDistribution shared(std::size_t dim, double keep_prob) {
    return shared_logit(dim, logit_of_prob(keep_prob));
  }

  static MaskDistribution shared_logit(std::size_t dim, double rho) {
    MaskDistribution q;
    q.mode_ = MaskMode::Shared;
    q.dim_ = dim;
    q.logits_.assign(1, rho);
    q.refresh();
    return q;
  }

  static MaskDistribution per_feature(std::span<const double> keep_probs) {
    std::vector<double> logits(keep_probs.size());
    for (std::size_t i = 0; i < keep_probs.size(); ++i) logits[i] = logit_of_prob(keep_probs[i]);
    return per_feature_logits(std::move(logits));
  }

  static MaskDistribution per_feature_logits(std::vector<double> logits) {
    MaskDistribution q;
    q.mode_ = MaskMode::PerFeature;
    q.dim_ = logits.size();
    q.logits_ = std::move(logits);
    q.refresh();
    return q;
  }

  /// group_of maps each element to a logit index in [0, n_groups).
  static MaskDistribution grouped(std::vector<std::size_t> group_of, std::vector<double> group_logits) {
    MaskDistribution q;
    q.mode_ = MaskMode::Grouped;
    q.dim_ = group_of.size();
    for (std::size_t g : group_of) {
      if (g >= group_logits.size()) {
        throw std::invalid_argument("MaskDistribution::grouped: group index out of range");
      }
    }
    q.group_of_ = std::move(group_of);
    q.logits_ = std::move(group_logits);
    q.refresh();
    return q;
  }

  MaskMode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }
  std::size_t param_count() const { return logits_.size(); }
  std::span<const double> logits() const { return logits_; }
  const std::vector<std::size_t>& group_assignment() const { return group_of_; }

  std::size_t param_of(std::size_t i) const {
    switch (mode_) {
      case MaskMode::Shared: return 0;
      case MaskMode::PerFeature: return i;
      case MaskMode::Grouped: return group_of_[i];
    }
    return 0;
  }

  double keep_prob(std::size_t i) const { return keep_[param_of(i)]; }

  /// E_q[z]: the elementwise keep-probabilities.
  std::vector<double> expected_mask() const {
    std::vector<double> lam(dim_);
    for (std::size_t i = 0; i < dim_; ++i) lam[i] = keep_[param_of(i)];
    return lam;
  }

  void sample_into(Rng& rng, MaskVector& z) const {
    z.bits.resize(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      z.bits[i] = rng.uniform() < keep_[param_of(i)] ? 1 : 0;
    }
  }

  MaskVector sample(Rng& rng) const {
    MaskVector z(dim_);
    sample_into(rng, z);
    return z;
  }

  double log_prob(const MaskVector& z) const {
    check_mask(z, "log_prob");
    double lp = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double rho = logits_[param_of(i)];
      lp += z[i] ? log_logistic(rho) : log_logistic(-rho);
    }
    return lp;
  }

  /// d log q(z) / d rho. With the logistic link each component k is the sum
  /// of (z_i - lambda_i) over the elements tied to logit k.
  std::vector<double> score_gradient(const MaskVector& z) const {
    check_mask(z, "score_gradient");
    std::vector<double> g(logits_.size(), 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      const std::size_t k = param_of(i);
      g[k] += (z[i] ? 1.0 : 0.0) - keep_[k];
    }
    return g;
  }

  /// -sum_i [lambda log lambda + (1-lambda) log(1-lambda)].
  double entropy() const {
    double h = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const std::size_t k = param_of(i);
      const double rho = logits_[k];
      h -= keep_[k] * log_logistic(rho) + keep_c_[k] * log_logistic(-rho);
    }
    return h;
  }

  /// E_q[log p(z)] = sum_i [lambda_i log p_i + (1-lambda_i) log(1-p_i)].
  double cross_entropy_with_prior(const PriorMask& prior) const {
    check_prior(prior, "cross_entropy_with_prior");
    double ce = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const std::size_t k = param_of(i);
      ce += keep_[k] * std::log(prior.keep_probs[i]) + keep_c_[k] * std::log1p(-prior.keep_probs[i]);
    }
    return ce;
  }

  /// Exact gradient of cross_entropy_with_prior + entropy (i.e. -KL(q||p))
  /// with respect to the logits: per logit k,
  /// sum over tied elements of lambda(1-lambda) [logit(p_i) - rho_k].
  std::vector<double> regularizer_gradient(const PriorMask& prior) const {
    check_prior(prior, "regularizer_gradient");
    std::vector<double> g(logits_.size(), 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      const std::size_t k = param_of(i);
      g[k] += keep_[k] * keep_c_[k] * (logit(prior.keep_probs[i]) - logits_[k]);
    }
    return g;
  }

  // -- mutation: confined to a single training owner --

  void shift_logits(std::span<const double> delta) {
    if (delta.size() != logits_.size()) {
      throw std::invalid_argument("MaskDistribution::shift_logits: size mismatch");
    }
    for (std::size_t k = 0; k < logits_.size(); ++k) logits_[k] += delta[k];
    refresh();
  }

  void clamp_logits(double lo = -kLogitClamp, double hi = kLogitClamp) {
    bool changed = false;
    for (double& rho : logits_) {
      if (rho < lo) { rho = lo; changed = true; }
      if (rho > hi) { rho = hi; changed = true; }
    }
    if (changed) refresh();
  }

  void set_logits(std::vector<double> logits) {
    if (logits.size() != logits_.size()) {
      throw std::invalid_argument("MaskDistribution::set_logits: size mismatch");
    }
    logits_ = std::move(logits);
    refresh();
  }

  // -- flat text record, used by CLI checkpointing --

  void save(std::ostream& out) const {
    out << "bdrop_mask v1\n";
    out << "mode " << to_string(mode_) << "\n";
    out << "dim " << dim_ << "\n";
    if (mode_ == MaskMode::Grouped) {
      out << "groups";
      for (std::size_t g : group_of_) out << ' ' << g;
      out << "\n";
    }
    out << "logits " << logits_.size();
    for (double rho : logits_) out << ' ' << format_logit(rho);
    out << "\n";
  }

  static MaskDistribution load(std::istream& in) {
    std::string header, word;
    std::getline(in, header);
    if (header != "bdrop_mask v1") {
      throw std::runtime_error("MaskDistribution::load: unrecognized header '" + header + "'");
    }
    std::string mode_name;
    in >> word >> mode_name;
    require(in, word, "mode");
    std::size_t dim = 0;
    in >> word >> dim;
    require(in, word, "dim");

    std::vector<std::size_t> group_of;
    if (mode_name == "grouped") {
      in >> word;
      require(in, word, "groups");
      group_of.resize(dim);
      for (auto& g : group_of) in >> g;
      if (!in) throw std::runtime_error("MaskDistribution::load: truncated group list");
    }
    std::size_t n_logits = 0;
    in >> word >> n_logits;
    require(in, word, "logits");
    std::vector<double> logits(n_logits);
    for (auto& rho : logits) in >> rho;
    if (!in) throw std::runtime_error("MaskDistribution::load: truncated logit list");

    if (mode_name == "shared") {
      if (n_logits != 1) throw std::runtime_error("MaskDistribution::load: shared mode expects one logit");
      return shared_logit(dim, logits[0]);
    }
    if (mode_name == "per_feature") {
      if (n_logits != dim) throw std::runtime_error("MaskDistribution::load: per_feature logit count mismatch");
      return per_feature_logits(std::move(logits));
    }
    if (mode_name == "grouped") {
      return grouped(std::move(group_of), std::move(logits));
    }
    throw std::runtime_error("MaskDistribution::load: unknown mode '" + mode_name + "'");
  }

 private:
  MaskDistribution() = default;

  static double logit_of_prob(double p) {
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument("MaskDistribution: keep probability must lie strictly inside (0,1)");
    }
    return logit(p);
  }

  static void require(std::istream& in, const std::string& got, std::string_view want) {
    if (!in || got != want) {
      throw std::runtime_error("MaskDistribution::load: expected field '" + std::string(want) + "'");
    }
  }

  static std::string format_logit(double rho) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, rho);
    if (ec != std::errc()) throw std::runtime_error("MaskDistribution::save: encoding failed");
    return std::string(buf, ptr);
  }

  void check_mask(const MaskVector& z, std::string_view op) const {
    if (z.size() != dim_) {
      std::ostringstream msg;
      msg << "MaskDistribution::" << op << ": mask length " << z.size()
          << " does not match distribution dimension " << dim_;
      throw std::invalid_argument(msg.str());
    }
  }

  void check_prior(const PriorMask& prior, std::string_view op) const {
    if (prior.keep_probs.size() != dim_) {
      std::ostringstream msg;
      msg << "MaskDistribution::" << op << ": prior dimension " << prior.keep_probs.size()
          << " does not match distribution dimension " << dim_;
      throw std::invalid_argument(msg.str());
    }
  }

  void refresh() {
    keep_.resize(logits_.size());
    keep_c_.resize(logits_.size());
    for (std::size_t k = 0; k < logits_.size(); ++k) {
      keep_[k] = logistic(logits_[k]);
      keep_c_[k] = logistic(-logits_[k]);  // 1 - lambda, precise near 1
    }
  }

  MaskMode mode_ = MaskMode::Shared;
  std::size_t dim_ = 0;
  std::vector<std::size_t> group_of_;  // Grouped mode only
  std::vector<double> logits_;         // one per tied parameter
  std::vector<double> keep_;           // lambda, cached from logits_
  std::vector<double> keep_c_;         // 1 - lambda
};

/// Visit every mask of the given dimension in ascending binary-code order
/// (bit i of the code is element i).
template <class F>
void for_each_mask(std::size_t dim, F&& fn) {
  if (dim > 25) {
    throw std::domain_error("for_each_mask: dimension too large for exhaustive enumeration");
  }
  MaskVector z(dim);
  const std::uint32_t count = 1u << dim;
  for (std::uint32_t code = 0; code < count; ++code) {
    for (std::size_t i = 0; i < dim; ++i) z.bits[i] = (code >> i) & 1u;
    fn(static_cast<const MaskVector&>(z));
  }
}

}  // namespace bdrop
