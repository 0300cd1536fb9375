#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "bcs/rng.hpp"

using bcs::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(bcs::derive_seed(7, s));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(bcs::derive_seed(1, 2), bcs::derive_seed(2, 1));
}

TEST(Rng, InverseGammaMoments) {
  Rng rng(3);
  const double shape = 6.0, scale = 10.0;
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += rng.inverse_gamma(shape, scale);
  // Mean scale / (shape - 1) = 2; sd of the sample mean is about 0.002.
  EXPECT_NEAR(sum / n, 2.0, 0.01);
}

TEST(Rng, ExponentialMeanOne) {
  Rng rng(5);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) sum += rng.exponential();
  EXPECT_NEAR(sum / 100000, 1.0, 0.015);
}
