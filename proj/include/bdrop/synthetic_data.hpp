#pragma once
// Synthetic binary-classification benchmark: a block of weakly informative
// Gaussian features whose mean is shifted by the label, padded with
// label-independent noise features. One seeded stream generates the
// train/valid/test splits in that order, so a (config, seed) pair defines the
// data uniquely.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdrop/rng.hpp"
#include "bdrop/text_io.hpp"

namespace bdrop {

struct DataConfig {
  std::size_t n_informative = 100;
  std::size_t n_noise = 900;
  double mean_shift = 0.1;   // informative features: N(+shift,std^2) if y=1 else N(-shift,std^2)
  double feature_std = 1.0;
  std::size_t n_train = 2000;
  std::size_t n_valid = 1000;
  std::size_t n_test = 20000;
  std::uint64_t seed = 0;

  std::size_t n_features() const { return n_informative + n_noise; }

  void validate() const {
    if (!(feature_std > 0.0)) throw std::invalid_argument("DataConfig: feature_std must be positive");
  }
};

struct Dataset {
  enum class Split { Train, Valid, Test };

  std::size_t n_cols = 0;
  std::size_t n_informative = 0;  // column-role boundary: [0, n_informative) carry signal
  std::vector<double> values;     // row-major, size() * n_cols
  std::vector<double> labels;     // 0.0 or 1.0
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }

  std::span<const double> input(std::size_t i) const {
    return {values.data() + i * n_cols, n_cols};
  }
  std::span<const double> target(std::size_t i) const { return {labels.data() + i, 1}; }
  double label(std::size_t i) const { return labels[i]; }

  bool operator==(const Dataset&) const = default;
};

struct DataTriple {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Per sample: draw the label, then every feature in column order.
inline DataTriple generate(const DataConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto make = [&](std::size_t n, Dataset::Split split) {
    Dataset d;
    d.n_cols = cfg.n_features();
    d.n_informative = cfg.n_informative;
    d.split = split;
    d.values.reserve(n * d.n_cols);
    d.labels.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
      const double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
      d.labels.push_back(y);
      const double mean = y == 1.0 ? cfg.mean_shift : -cfg.mean_shift;
      for (std::size_t i = 0; i < cfg.n_informative; ++i) {
        d.values.push_back(rng.normal(mean, cfg.feature_std));
      }
      for (std::size_t i = 0; i < cfg.n_noise; ++i) {
        d.values.push_back(rng.normal(0.0, cfg.feature_std));
      }
    }
    return d;
  };
  DataTriple triple;
  triple.train = make(cfg.n_train, Dataset::Split::Train);
  triple.valid = make(cfg.n_valid, Dataset::Split::Valid);
  triple.test = make(cfg.n_test, Dataset::Split::Test);
  return triple;
}

/// Accuracy of the likelihood-ratio rule sign(sum of informative features):
/// Phi(sqrt(k) * shift / std) with k informative features.
inline double bayes_optimal_accuracy(const DataConfig& cfg) {
  if (cfg.n_informative == 0) return 0.5;
  cfg.validate();
  return normal_cdf(std::sqrt(static_cast<double>(cfg.n_informative)) * cfg.mean_shift /
                    cfg.feature_std);
}

/// CSV layout: header names the column roles ("label,info0,...,noise0,...");
/// labels are written as integers, features in shortest round-trip form.
inline void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "label";
  for (std::size_t i = 0; i < d.n_informative; ++i) out << ",info" << i;
  for (std::size_t i = 0; i < d.n_cols - d.n_informative; ++i) out << ",noise" << i;
  out << "\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    out << (d.labels[r] == 1.0 ? '1' : '0');
    const auto row = d.input(r);
    for (double v : row) out << ',' << format_double(v);
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

inline Dataset load_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  const auto fail = [&](std::size_t line_no, const std::string& what) -> std::runtime_error {
    return std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line)) throw fail(1, "missing header row");
  const auto header = split(line, ',');
  if (header.empty() || header[0] != "label") throw fail(1, "first column must be 'label'");

  Dataset d;
  d.n_cols = header.size() - 1;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i].starts_with("info")) ++d.n_informative;
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != d.n_cols + 1) {
      throw fail(line_no, "expected " + std::to_string(d.n_cols + 1) + " fields, got " +
                              std::to_string(fields.size()));
    }
    if (fields[0] == "1") {
      d.labels.push_back(1.0);
    } else if (fields[0] == "0") {
      d.labels.push_back(0.0);
    } else {
      throw fail(line_no, "label must be 0 or 1, got '" + std::string(fields[0]) + "'");
    }
    for (std::size_t i = 1; i < fields.size(); ++i) {
      try {
        d.values.push_back(parse_double(fields[i]));
      } catch (const std::exception&) {
        throw fail(line_no, "invalid number '" + std::string(fields[i]) + "'");
      }
    }
  }
  return d;
}

}  // namespace bdrop
