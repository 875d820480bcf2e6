#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sdlab/sampling.hpp"

namespace sdlab {
namespace {

TEST(Rng, DeterministicPerSeedAndDistinctAcrossSeeds) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 8; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.below(7), 7u);
  }
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(5, s));
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Dist, FromLogitsIsValid) {
  const Dist d = Dist::from_logits(std::vector<double>{0.0, 1.0, -2.0}, 0.7);
  EXPECT_TRUE(d.valid());
  EXPECT_THROW(Dist({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(Dist({1.5, -0.5}), std::invalid_argument);
}

TEST(Sample, FrequenciesMatchProbabilities) {
  const Dist d({0.1, 0.6, 0.3});
  Rng rng(3);
  std::vector<double> count(3, 0.0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) count[sample(d, rng)] += 1.0;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(count[i] / n, d[i], 0.005);
}

TEST(Sample, NeverDrawsZeroMassTokens) {
  const Dist d({0.0, 1.0, 0.0});
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample(d, rng), 1u);
}

TEST(Residual, WorkedExample) {
  const Dist p({0.5, 0.3, 0.2}), q({0.2, 0.5, 0.3});
  const Dist r = residual(p, q);
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  EXPECT_DOUBLE_EQ(r[1], 0.0);
  EXPECT_DOUBLE_EQ(r[2], 0.0);
}

TEST(Residual, DegenerateWhenEqual) {
  const Dist p({0.25, 0.75});
  EXPECT_THROW(residual(p, p), DegenerateResidual);
}

// One draft-then-verify step emits x with probability
// q(x) min(1, p(x)/q(x)) + (1 - beta) r(x), which must equal p(x).
TEST(Residual, SpeculativeStepReproducesTarget) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pl(6), ql(6);
    for (auto& v : pl) v = 2.0 * rng.normal();
    for (auto& v : ql) v = 2.0 * rng.normal();
    const Dist p = Dist::from_logits(pl), q = Dist::from_logits(ql);
    double beta = 0.0;
    for (Token x = 0; x < 6; ++x) beta += q[x] * acceptance_probability(p, q, x);
    const Dist r = residual(p, q);
    for (Token x = 0; x < 6; ++x) {
      EXPECT_NEAR(q[x] * acceptance_probability(p, q, x) + (1.0 - beta) * r[x], p[x], 1e-14);
    }
  }
}

TEST(AcceptanceProbability, Examples) {
  const Dist p({0.5, 0.5}), q({1.0, 0.0});
  EXPECT_DOUBLE_EQ(acceptance_probability(p, q, 0), 0.5);
  EXPECT_DOUBLE_EQ(acceptance_probability(q, p, 0), 1.0);
  EXPECT_ANY_THROW(acceptance_probability(p, q, 1));
}

TEST(Greedy, LowestIdAmongMaxima) {
  EXPECT_EQ(greedy(std::vector<double>{0.0, 2.0, 2.0}), 1u);
}

TEST(TotalVariation, HalfL1) {
  EXPECT_DOUBLE_EQ(total_variation(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}),
                   0.5);
}

}  // namespace
}  // namespace sdlab
