#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dyntree/numeric.hpp"

using namespace dyntree;

TEST(LogSumExp, MatchesDirectSum) {
  const std::vector<double> v{-1.0, 0.5, 2.0};
  EXPECT_NEAR(log_sum_exp(v), std::log(std::exp(-1.0) + std::exp(0.5) + std::exp(2.0)), 1e-14);
}

TEST(LogSumExp, HandlesExtremes) {
  EXPECT_EQ(log_sum_exp(std::vector<double>{}), kNegInf);
  EXPECT_EQ(log_sum_exp(std::vector<double>{kNegInf, kNegInf}), kNegInf);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{-1000.0, -1000.0}), -1000.0 + std::log(2.0), 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{1000.0, kNegInf}), 1000.0, 1e-12);
}

TEST(LogSumAccumulator, AgreesWithBatch) {
  Rng rng(3);
  std::vector<double> v;
  LogSumAccumulator acc;
  for (int i = 0; i < 200; ++i) {
    const double x = 400.0 * uniform01(rng) - 200.0;
    v.push_back(x);
    acc.add(x);
  }
  acc.add(kNegInf);
  EXPECT_NEAR(acc.value(), log_sum_exp(v), 1e-10);
  EXPECT_EQ(LogSumAccumulator{}.value(), kNegInf);
}

TEST(XLogXOverY, Conventions) {
  EXPECT_EQ(x_log_x_over_y(0.0, 0.0), 0.0);
  EXPECT_EQ(x_log_x_over_y(0.0, 0.5), 0.0);
  EXPECT_EQ(x_log_x_over_y(0.1, 0.0), kInf);
  EXPECT_NEAR(x_log_x_over_y(0.5, 0.25), 0.5 * std::log(2.0), 1e-15);
}

TEST(Normalize, ReturnsSumAndLeavesZeroVector) {
  std::vector<double> v{1.0, 3.0};
  EXPECT_DOUBLE_EQ(normalize(v), 4.0);
  EXPECT_DOUBLE_EQ(v[0], 0.25);
  std::vector<double> z{0.0, 0.0};
  EXPECT_EQ(normalize(z), 0.0);
  EXPECT_EQ(z[0], 0.0);
}

TEST(RescaleByMax, LogOfMax) {
  std::vector<double> v{2.0, 8.0};
  EXPECT_NEAR(rescale_by_max(v), std::log(8.0), 1e-15);
  EXPECT_DOUBLE_EQ(v[1], 1.0);
  std::vector<double> z{0.0, 0.0};
  EXPECT_EQ(rescale_by_max(z), kNegInf);
}

TEST(Softmax, ShiftInvariantAndRejectsAllNegInf) {
  std::vector<double> a{1.0, 2.0, 3.0};
  std::vector<double> b{101.0, 102.0, 103.0};
  ASSERT_TRUE(softmax_in_place(a));
  ASSERT_TRUE(softmax_in_place(b));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
  std::vector<double> c{kNegInf, kNegInf};
  EXPECT_FALSE(softmax_in_place(c));
  std::vector<double> d{kNegInf, 0.0};
  ASSERT_TRUE(softmax_in_place(d));
  EXPECT_EQ(d[0], 0.0);
  EXPECT_EQ(d[1], 1.0);
}

TEST(Seeds, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  EXPECT_NE(derive_seed(7, 3), derive_seed(7, 4));
  EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
  // splitmix64 reference value for input 0
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Uniform01, RangeAndMean) {
  Rng rng(11);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(SampleIndex, FrequenciesFollowWeights) {
  Rng rng(5);
  const std::vector<double> w{1.0, 0.0, 3.0};
  std::vector<int> hits(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++hits[sample_index(w, rng)];
  EXPECT_EQ(hits[1], 0);
  const double p = 0.25;
  EXPECT_NEAR(hits[0] / double(n), p, 4.0 * std::sqrt(p * (1 - p) / n));
}
