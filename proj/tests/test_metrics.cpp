#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "brainssl/error.hpp"
#include "brainssl/metrics.hpp"

using namespace brainssl;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

}  // namespace

TEST(Auc, WorkedExamples) {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(auc(s, y), 0.75);
  std::vector<double> sep{0.1, 0.2, 0.9, 1.0};
  EXPECT_EQ(auc(sep, y), 1.0);
  std::vector<double> flat{3, 3, 3, 3};
  EXPECT_EQ(auc(flat, y), 0.5);
}

TEST(Auc, EqualsPairwiseOracleWithTies) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + gen() % 499;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const int levels = 1 + static_cast<int>(gen() % 20);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(gen() % levels) / 3.0;
      y[i] = static_cast<int>(gen() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_EQ(auc(s, y), pairwise_auc(s, y));
  }
}

TEST(Auc, Errors) {
  std::vector<double> s{0.1, 0.2};
  std::vector<int> one{1, 1};
  EXPECT_THROW(auc(s, one), DegenerateInput);
  std::vector<double> nan{0.1, NAN};
  std::vector<int> y{0, 1};
  EXPECT_THROW(auc(nan, y), NumericError);
}

TEST(MeanAbsErr, Examples) {
  std::vector<double> p{1, 2, 3}, t{2, 2, 5};
  EXPECT_DOUBLE_EQ(mean_abs_err(p, t), 1.0);
  EXPECT_EQ(mean_abs_err(p, p), 0.0);
  std::vector<double> shifted{1 - 2.5, 2 - 2.5, 3 - 2.5};
  EXPECT_DOUBLE_EQ(mean_abs_err(shifted, p), 2.5);
  std::vector<double> short_one{1};
  EXPECT_THROW(mean_abs_err(short_one, p), InvalidArgument);
}

TEST(MeanStd, Examples) {
  std::vector<double> same(5, 0.837);
  auto a = mean_std(same);
  EXPECT_EQ(a.mean, 0.837);
  EXPECT_EQ(*a.std, 0.0);
  std::vector<double> v{1, 2, 3};
  auto b = mean_std(v);
  EXPECT_DOUBLE_EQ(b.mean, 2.0);
  EXPECT_DOUBLE_EQ(*b.std, 1.0);
  std::vector<double> single{4.2};
  EXPECT_FALSE(mean_std(single).std.has_value());
}
