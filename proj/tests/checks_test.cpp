#include <gtest/gtest.h>

#include "sdlab/checks.hpp"
#include "test_util.hpp"

namespace sdlab {
namespace {

using testing::random_tokens;
using testing::tiny_target;

TEST(CheckLossless, CoversChainAndTreeForEveryPair) {
  LosslessOptions o;
  o.pairs = 6;
  const LosslessReport r = check_lossless(o);
  ASSERT_EQ(r.cases.size(), 12u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(r.cases[2 * i].mode, "chain");
    EXPECT_EQ(r.cases[2 * i + 1].mode, "tree");
    EXPECT_EQ(r.cases[2 * i].depth, 1 + i % 3);
  }
  EXPECT_LT(r.max_tv, 1e-12);
  o.trees = false;
  EXPECT_EQ(check_lossless(o).cases.size(), 6u);
}

TEST(CheckLossless, RandomToyModelsAreNeitherUniformNorDeterministic) {
  auto m = random_toy_model(4, 2.0, 5);
  const Sequence ctx = {1, 2};
  KvCache c = m->make_cache();
  const Dist d = Dist::from_logits(m->forward(ctx, c).logits.row_span(1));
  const double top = *std::max_element(d.probs.begin(), d.probs.end());
  EXPECT_GT(top, 0.3);
  EXPECT_LT(top, 0.95);
}

TEST(CheckGreedy, BuiltInDraftersMatchGreedyGeneration) {
  auto target = tiny_target(8);
  auto identity = std::make_shared<TransformerDrafter>(target, "identity");
  const std::vector<std::shared_ptr<const Drafter>> drafters = {
      identity,
      std::make_shared<LogitRewriteDrafter>(identity, LogitRewriteDrafter::Mode::kAdversarial),
      std::make_shared<LogitRewriteDrafter>(identity, LogitRewriteDrafter::Mode::kUniformRandom),
      std::make_shared<TransformerDrafter>(tiny_target(9), "other")};
  const std::vector<Sequence> prompts = {random_tokens(3, 8, 1), random_tokens(6, 8, 2)};
  DecodeConfig d;
  d.depth = 3;
  d.max_new_tokens = 12;
  d.tree.depth = 3;
  d.tree.total_tokens = 6;
  const GreedyReport r = check_greedy(*target, drafters, prompts, d);
  EXPECT_EQ(r.runs, 16u);
  EXPECT_TRUE(r.mismatches.empty());
}

TEST(GradientCheck, ReportsParameterCounts) {
  ParamStore ps;
  Tensor w(2, 3);
  for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = 0.1 * static_cast<double>(i) - 0.2;
  ps.add("w", w);
  ps.add("frozen", Tensor(1, 1), false);
  const Tensor target(2, 3, 0.5);
  const GradientCheck r = gradient_check(ps, [&](Graph& g) {
    return ad::smooth_l1(g, g.param(ps.get("w")), target, 0.1);
  });
  EXPECT_EQ(r.params, 1u);
  EXPECT_EQ(r.elements, 6u);
  EXPECT_EQ(r.worst, "w");
  EXPECT_LT(r.max_rel_error, 1e-8);
}

}  // namespace
}  // namespace sdlab
