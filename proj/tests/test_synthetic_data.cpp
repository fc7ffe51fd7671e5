#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "bdrop/rng.hpp"
#include "bdrop/synthetic_data.hpp"
#include "oracles.hpp"

using namespace bdrop;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "bdrop_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("default config produces the documented split shapes") {
  DataConfig cfg;
  cfg.seed = 1;
  const auto data = generate(cfg);
  CHECK(data.train.size() == 2000);
  CHECK(data.valid.size() == 1000);
  CHECK(data.test.size() == 20000);
  CHECK(data.train.n_cols == 1000);
  CHECK(data.valid.n_cols == 1000);
  CHECK(data.test.n_cols == 1000);
  CHECK(data.train.n_informative == 100);
  CHECK(data.train.values.size() == 2000 * 1000);
}

TEST_CASE("informative columns shift with the label, noise columns do not") {
  DataConfig cfg;
  cfg.n_informative = 3;
  cfg.n_noise = 3;
  cfg.n_train = 20000;
  cfg.n_valid = 0;
  cfg.n_test = 0;
  cfg.seed = 77;
  const auto data = generate(cfg);
  const auto& d = data.train;

  // label marginal: within 3 sigma of 1/2
  double label_mean = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) label_mean += d.label(i);
  label_mean /= double(d.size());
  CHECK(std::abs(label_mean - 0.5) <= 3.0 / (2.0 * std::sqrt(double(d.size()))));

  // conditional mean of an informative column
  for (std::size_t col : {std::size_t{0}, std::size_t{2}}) {
    double sum1 = 0.0, sum0 = 0.0;
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.label(i) == 1.0) {
        sum1 += d.input(i)[col];
        ++n1;
      } else {
        sum0 += d.input(i)[col];
        ++n0;
      }
    }
    CHECK(std::abs(sum1 / n1 - 0.1) <= 3.0 / std::sqrt(double(n1)));
    CHECK(std::abs(sum0 / n0 + 0.1) <= 3.0 / std::sqrt(double(n0)));
  }

  // a noise column is uncorrelated with the label
  for (std::size_t col : {std::size_t{3}, std::size_t{5}}) {
    double corr = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      corr += (d.label(i) - label_mean) * d.input(i)[col];
    }
    corr /= double(d.size());
    CHECK(std::abs(corr) <= 3.0 / std::sqrt(double(d.size())));
  }
}

TEST_CASE("generation is seed-deterministic and splits are disjoint draws") {
  DataConfig cfg;
  cfg.n_informative = 4;
  cfg.n_noise = 4;
  cfg.n_train = 50;
  cfg.n_valid = 30;
  cfg.n_test = 40;
  cfg.seed = 9;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  CHECK(a.train == b.train);
  CHECK(a.valid == b.valid);
  CHECK(a.test == b.test);

  cfg.seed = 10;
  const auto c = generate(cfg);
  CHECK(a.train != c.train);

  // rows from different splits never coincide
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    for (std::size_t j = 0; j < a.valid.size(); ++j) {
      bool same = true;
      for (std::size_t k = 0; k < a.train.n_cols && same; ++k) {
        same = a.train.input(i)[k] == a.valid.input(j)[k];
      }
      CHECK_FALSE(same);
    }
  }
}

TEST_CASE("bayes_optimal_accuracy: closed form, monotonicity, degenerate case") {
  DataConfig cfg;
  CHECK(bayes_optimal_accuracy(cfg) == doctest::Approx(normal_cdf(1.0)).epsilon(1e-15));
  CHECK(bayes_optimal_accuracy(cfg) == doctest::Approx(0.8413447460685429).epsilon(1e-12));

  DataConfig none = cfg;
  none.n_informative = 0;
  CHECK(bayes_optimal_accuracy(none) == 0.5);

  double prev = 0.5;
  for (double shift : {0.05, 0.1, 0.2, 0.4}) {
    DataConfig c = cfg;
    c.mean_shift = shift;
    const double acc = bayes_optimal_accuracy(c);
    CHECK(acc > prev);
    prev = acc;
  }
  prev = 0.5;
  for (std::size_t k : {std::size_t{1}, std::size_t{25}, std::size_t{100}, std::size_t{400}}) {
    DataConfig c = cfg;
    c.n_informative = k;
    const double acc = bayes_optimal_accuracy(c);
    CHECK(acc > prev);
    prev = acc;
  }
}

TEST_CASE("bayes_optimal_accuracy matches a Monte Carlo run of the oracle rule") {
  // classify fresh samples by the sign of the informative-block sum
  DataConfig cfg;
  cfg.seed = 123;
  Rng rng(cfg.seed);
  const std::size_t n = 1000000;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double mean = y == 1.0 ? cfg.mean_shift : -cfg.mean_shift;
    double total = 0.0;
    for (std::size_t i = 0; i < cfg.n_informative; ++i) total += rng.normal(mean, cfg.feature_std);
    const double predicted = total >= 0.0 ? 1.0 : 0.0;
    if (predicted == y) ++correct;
  }
  const double mc = double(correct) / double(n);
  CHECK(std::abs(mc - bayes_optimal_accuracy(cfg)) <= 0.002);
}

TEST_CASE("csv round trip preserves labels bitwise and floats exactly") {
  DataConfig cfg;
  cfg.n_informative = 5;
  cfg.n_noise = 3;
  cfg.n_train = 40;
  cfg.n_valid = 0;
  cfg.n_test = 0;
  cfg.seed = 31415;
  const auto data = generate(cfg);
  const auto path = temp_path("roundtrip.csv");
  save_csv(data.train, path);
  const auto back = load_csv(path);
  CHECK(back.n_cols == data.train.n_cols);
  CHECK(back.n_informative == data.train.n_informative);
  REQUIRE(back.size() == data.train.size());
  CHECK(back.labels == data.train.labels);
  CHECK(back.values == data.train.values);
  std::filesystem::remove(path);
}

TEST_CASE("empty dataset writes a header-only file") {
  Dataset d;
  d.n_cols = 4;
  d.n_informative = 2;
  const auto path = temp_path("empty.csv");
  save_csv(d, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "label,info0,info1,noise0,noise1");
  CHECK_FALSE(std::getline(in, line));
  const auto back = load_csv(path);
  CHECK(back.size() == 0);
  CHECK(back.n_cols == 4);
  CHECK(back.n_informative == 2);
  std::filesystem::remove(path);
}

TEST_CASE("malformed csv reports the offending line") {
  const auto path = temp_path("bad.csv");
  {
    std::ofstream out(path);
    out << "label,info0,noise0\n";
    out << "1,0.5,0.25\n";
    out << "0,oops,0.75\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains(":3:"), std::runtime_error);
  {
    std::ofstream out(path);
    out << "label,info0,noise0\n";
    out << "1,0.5\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains(":2:"), std::runtime_error);
  {
    std::ofstream out(path);
    out << "id,info0\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("label"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("config validation") {
  DataConfig cfg;
  cfg.feature_std = 0.0;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}
