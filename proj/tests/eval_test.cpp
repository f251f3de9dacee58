// Copyright 2026 The editforget Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "editforget/error.hpp"
#include "editforget/eval.hpp"

namespace editforget {
namespace {

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l("the cat sat", "the cat sat"), 1.0);
  EXPECT_DOUBLE_EQ(rouge_l("dog ran", "the cat sat"), 0.0);
  EXPECT_DOUBLE_EQ(rouge_l("the cat", "the cat sat"), 2.0 / 3.0);
  EXPECT_THROW(rouge_l("anything", ""), Error);
}

TEST(RougeL, SelfScoreIsOneAndRangeHolds) {
  const char* texts[] = {"Pride and Prejudice", "a b c d e", "x", "I don't know."};
  for (const char* a : texts) {
    EXPECT_DOUBLE_EQ(rouge_l(a, a), 1.0);
    for (const char* b : texts) {
      const double r = rouge_l(a, b);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
}

TEST(TruthRatio, ReportedBoundaries) {
  EXPECT_DOUBLE_EQ(report_truth_ratio(1.0, false), 0.0);
  EXPECT_DOUBLE_EQ(report_truth_ratio(1.0, true), 0.0);
  EXPECT_DOUBLE_EQ(report_truth_ratio(0.5, false), 0.5);
  EXPECT_DOUBLE_EQ(report_truth_ratio(2.0, true), 0.5);
  // Both forms clamp at zero on the undesired side.
  EXPECT_DOUBLE_EQ(report_truth_ratio(3.0, false), 0.0);
  EXPECT_DOUBLE_EQ(report_truth_ratio(0.25, true), 0.0);
}

TEST(ModelUtility, Examples) {
  EXPECT_DOUBLE_EQ(model_utility(std::vector<double>(9, 0.5)), 0.5);
  std::vector<double> with_zero(9, 0.8);
  with_zero[4] = 0.0;
  EXPECT_DOUBLE_EQ(model_utility(with_zero), 0.0);
  std::vector<double> v(8, 1.0);
  v.push_back(0.5);
  EXPECT_DOUBLE_EQ(model_utility(v), 0.9);
  EXPECT_THROW(model_utility(std::vector<double>{0.5, 1.5}), Error);
}

TEST(ModelUtility, HarmonicAtMostArithmetic) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(9);
    for (auto& x : v) x = u(gen);
    double mean = 0;
    for (double x : v) mean += x / 9;
    EXPECT_LE(model_utility(v), mean + 1e-12);
  }
}

// Scaled statistic |count_a * nb - count_b * na| maximised over a direct scan
// of every sample value.
long long direct_scaled_d(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> xs = a;
  xs.insert(xs.end(), b.begin(), b.end());
  long long best = 0;
  const long long na = a.size(), nb = b.size();
  for (double x : xs) {
    long long ca = 0, cb = 0;
    for (double y : a) ca += y <= x;
    for (double y : b) cb += y <= x;
    best = std::max(best, std::llabs(ca * nb - cb * na));
  }
  return best;
}

// Enumerates every way of drawing |a| values from the pooled sample.
double brute_force_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const int n = pooled.size();
  const long long observed = direct_scaled_d(a, b);
  long long total = 0, extreme = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != static_cast<int>(a.size())) continue;
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) ((mask >> i) & 1 ? x : y).push_back(pooled[i]);
    ++total;
    if (direct_scaled_d(x, y) >= observed) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

TEST(KsTest, Examples) {
  const std::vector<double> a = {1, 3}, b = {2, 4};
  const KsResult r = ks_two_sample(a, b);
  EXPECT_DOUBLE_EQ(r.statistic, 0.5);
  EXPECT_EQ(r.p_value, brute_force_p(a, b));
  const std::vector<double> same = {0.2, 0.7, 0.7};
  const KsResult s = ks_two_sample(same, same);
  EXPECT_EQ(s.statistic, 0.0);
  EXPECT_EQ(s.p_value, 1.0);
  const KsResult d = ks_two_sample(std::vector<double>{1, 2}, std::vector<double>{5, 6, 7});
  EXPECT_EQ(d.statistic, 1.0);
  EXPECT_THROW(ks_two_sample(std::vector<double>{}, b), Error);
}

TEST(KsTest, ExactMatchesBruteForceEnumeration) {
  std::mt19937_64 gen(17);
  for (int t = 0; t < 200; ++t) {
    const int na = 1 + gen() % 9;
    const int nb = 1 + gen() % (10 - na);
    // Small integer values force ties.
    std::vector<double> a(na), b(nb);
    for (auto& x : a) x = static_cast<double>(gen() % 6);
    for (auto& x : b) x = static_cast<double>(gen() % 6);
    const KsResult r = ks_two_sample(a, b);
    EXPECT_EQ(r.statistic, static_cast<double>(direct_scaled_d(a, b)) / (na * nb));
    EXPECT_EQ(r.p_value, brute_force_p(a, b)) << "instance " << t;
  }
}

TEST(KsTest, InvariantUnderMonotoneTransform) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 20; ++t) {
    for (int size : {5, 30}) {
      std::vector<double> a(size), b(size + 3);
      for (auto& x : a) x = n01(gen);
      for (auto& x : b) x = n01(gen) + 0.5;
      std::vector<double> ta = a, tb = b;
      for (auto& x : ta) x = 2 * x + 1;
      for (auto& x : tb) x = 2 * x + 1;
      const KsResult r = ks_two_sample(a, b), s = ks_two_sample(ta, tb);
      EXPECT_EQ(r.statistic, s.statistic);
      EXPECT_EQ(r.p_value, s.p_value);
    }
  }
}

TEST(KsTest, AsymptoticBranchIsSane) {
  std::vector<double> a(40), b(40);
  for (int i = 0; i < 40; ++i) {
    a[i] = i;
    b[i] = i + 0.5;
  }
  EXPECT_GT(ks_two_sample(a, b).p_value, 0.99);
  for (auto& x : b) x += 100;
  EXPECT_LT(ks_two_sample(a, b).p_value, 1e-10);
}

TEST(ForgetQuality, IdenticalSamplesGiveOne) {
  const std::vector<double> v = {0.3, 1.2, 0.9, 2.5, 0.1};
  EXPECT_EQ(forget_quality(v, v), 1.0);
  EXPECT_THROW(forget_quality(v, std::vector<double>{1.0}), Error);
}

}  // namespace
}  // namespace editforget
