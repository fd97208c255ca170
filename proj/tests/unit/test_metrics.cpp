#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dcsim/metrics.hpp"
#include "dcsim/random.hpp"

using namespace dcsim;

namespace {

double brute_roc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

void random_instance(Rng& rng, std::vector<double>& s, std::vector<int>& y) {
  const std::size_t n = 2 + rng.below(60);
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<double>(rng.below(10)) / 10.0;  // plenty of ties
    y[i] = rng.bernoulli(0.4) ? 1 : 0;
  }
  y[0] = 1;
  y[1] = 0;
}

}  // namespace

TEST(RocAuc, Examples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.3, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.2, 0.8, 0.3}, std::vector<int>{1, 0, 0, 1}), 0.75);
}

TEST(RocAuc, Errors) {
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetric);
  EXPECT_THROW(roc_auc(std::vector<double>{}, std::vector<int>{}), UndefinedMetric);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), InvalidArgument);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  Rng rng(1);
  std::vector<double> s;
  std::vector<int> y;
  for (int t = 0; t < 200; ++t) {
    random_instance(rng, s, y);
    EXPECT_NEAR(roc_auc(s, y), brute_roc(s, y), 1e-12);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  std::vector<double> s(50);
  std::vector<int> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    s[i] = rng.uniform();
    y[i] = i % 3 == 0;
  }
  std::vector<double> t(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3 * s[i]) - 7;
  EXPECT_EQ(roc_auc(s, y), roc_auc(t, y));
  std::vector<int> flipped(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
  EXPECT_DOUBLE_EQ(roc_auc(s, y) + roc_auc(s, flipped), 1.0);
}

TEST(PrAuc, Examples) {
  EXPECT_EQ(pr_auc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(pr_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0, 0}), 0.4);
  EXPECT_NEAR(pr_auc(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1}), 5.0 / 6.0, 1e-15);
  EXPECT_THROW(pr_auc(std::vector<double>{0.2, 0.1}, std::vector<int>{0, 0}), UndefinedMetric);
}

TEST(MeanStderr, Examples) {
  auto r = mean_stderr(std::vector<double>{0.5});
  EXPECT_EQ(r.mean, 0.5);
  EXPECT_EQ(r.std_error, 0.0);
  r = mean_stderr(std::vector<double>{1, 1, 1, 1, 1});
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.std_error, 0.0);
  r = mean_stderr(std::vector<double>{0.80, 0.82, 0.78, 0.81, 0.79});
  EXPECT_NEAR(r.mean, 0.80, 1e-12);
  EXPECT_NEAR(r.std_error, std::sqrt(0.00025) / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(r.std_error, 0.00707, 1e-5);
  EXPECT_THROW(mean_stderr(std::vector<double>{}), InvalidArgument);
}
