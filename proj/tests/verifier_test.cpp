#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "sdlab/checks.hpp"
#include "sdlab/verifier.hpp"
#include "test_util.hpp"

namespace sdlab {
namespace {

using testing::random_tokens;
using testing::tiny_target;

TargetState prefill(const TargetModel& target, const Sequence& prompt, Token pending) {
  TargetState s{prompt, target.make_cache()};
  target.forward(prompt, s.cache);
  s.tokens.push_back(pending);
  return s;
}

Dist next_dist(const TargetModel& target, const Sequence& context, double temperature = 1.0) {
  KvCache c = target.make_cache();
  const auto out = target.forward(context, c);
  return Dist::from_logits(out.logits.row_span(context.size() - 1), temperature);
}

Dist point_mass(std::size_t vocab, Token x) {
  std::vector<double> p(vocab, 0.0);
  p[x] = 1.0;
  return Dist(p);
}

TEST(VerifyChain, AcceptanceRateIsPOverQ) {
  auto target = tiny_target(3, testing::tiny_config(8, 16, 3, 2, 48));
  const Sequence prompt = random_tokens(5, 8, 1);
  const Token pending = 2;
  Sequence ctx = prompt;
  ctx.push_back(pending);
  const Dist p = next_dist(*target, ctx);
  // Smallest-probability token x, drafted from q with q(x) = 2 p(x).
  const Token x = static_cast<Token>(std::min_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
  ASSERT_LT(p[x], 0.5);
  std::vector<double> qv(8, (1.0 - 2.0 * p[x]) / 7.0);
  qv[x] = 2.0 * p[x];
  const Dist q(qv);
  Rng rng(11);
  const int trials = 20000;
  int accepted = 0;
  for (int i = 0; i < trials; ++i) {
    TargetState s = prefill(*target, prompt, pending);
    const Token d[] = {x};
    const Dist dd[] = {q};
    accepted += verify_chain(*target, s, d, dd, 1.0, &rng).accepted_count;
  }
  EXPECT_NEAR(static_cast<double>(accepted) / trials, 0.5, 0.01);
}

TEST(VerifyChain, FirstTokenMarginalEqualsTarget) {
  auto target = tiny_target(4, testing::tiny_config(4, 16, 3, 2, 48));
  const Sequence prompt = random_tokens(4, 4, 2);
  Sequence ctx = prompt;
  ctx.push_back(1);
  const Dist p = next_dist(*target, ctx);
  const Dist q({0.7, 0.1, 0.1, 0.1});
  Rng rng(5);
  std::vector<double> count(4, 0.0);
  const int trials = 40000;
  for (int i = 0; i < trials; ++i) {
    TargetState s = prefill(*target, prompt, 1);
    const Token d = static_cast<Token>(sample(q, rng));
    const Dist dd[] = {q};
    count[verify_chain(*target, s, std::span<const Token>(&d, 1), dd, 1.0, &rng).committed[0]] += 1.0;
  }
  for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(count[v] / trials, p[v], 0.01);
}

TEST(VerifyChain, GreedyAcceptsMatchingPrefix) {
  auto target = tiny_target(5);
  const Sequence prompt = random_tokens(5, 8, 3);
  const auto greedy_tokens = generate(*target, prompt, 5, 0.0, nullptr);
  // Draft: two correct tokens then a wrong one.
  std::vector<Token> draft = {greedy_tokens[1], greedy_tokens[2], (greedy_tokens[3] + 1) % 8,
                              greedy_tokens[4]};
  TargetState s = prefill(*target, prompt, greedy_tokens[0]);
  const auto res = verify_chain(*target, s, draft, {}, 0.0, nullptr);
  EXPECT_EQ(res.accepted_count, 2u);
  EXPECT_EQ(res.committed, (std::vector<Token>{greedy_tokens[1], greedy_tokens[2], greedy_tokens[3]}));
}

TEST(VerifyChain, RollbackMatchesFreshCacheAndTaps) {
  auto target = tiny_target(5);
  const Sequence prompt = random_tokens(5, 8, 4);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    TargetState s = prefill(*target, prompt, 3);
    const std::vector<Token> draft = random_tokens(3, 8, 100 + trial);
    const std::vector<Dist> dists(3, Dist(std::vector<double>(8, 0.125)));
    const auto res = verify_chain(*target, s, draft, dists, 1.0, &rng);
    KvCache fresh = target->make_cache();
    const auto out = target->forward(
        std::span<const Token>(s.tokens.data(), s.tokens.size() - 1), fresh);
    EXPECT_TRUE(s.cache == fresh);
    ASSERT_EQ(res.taps.positions(), res.accepted_count + 1);
    for (std::size_t r = 0; r < res.taps.positions(); ++r) {
      const auto a = res.taps.top.row_span(r);
      const auto b = out.taps.top.row_span(prompt.size() + r);
      EXPECT_EQ(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
    }
  }
}

TEST(VerifyChain, RejectsInconsistentState) {
  auto target = tiny_target(5);
  TargetState s{random_tokens(4, 8, 1), target->make_cache()};
  const Token d[] = {1};
  EXPECT_THROW(verify_chain(*target, s, d, {}, 0.0, nullptr), std::invalid_argument);
}

DraftTree two_level_tree(const std::vector<Token>& level1, const std::vector<Token>& level2) {
  DraftTree t;
  for (Token x : level1) {
    DraftNode n;
    n.token = x;
    t.nodes.push_back(n);
  }
  for (Token x : level2) {
    DraftNode n;
    n.token = x;
    n.parent = 0;
    n.depth = 2;
    t.nodes.push_back(n);
  }
  return t;
}

TEST(VerifyTree, GreedyFollowsLongestMatchingPath) {
  auto target = tiny_target(6);
  const Sequence prompt = random_tokens(5, 8, 5);
  const auto g = generate(*target, prompt, 4, 0.0, nullptr);
  const DraftTree t = two_level_tree({(g[1] + 1) % 8, g[1]}, {});
  DraftTree tree = t;
  DraftNode deep;
  deep.token = g[2];
  deep.parent = 1;
  deep.depth = 2;
  tree.nodes.push_back(deep);
  TargetState s = prefill(*target, prompt, g[0]);
  const auto res = verify_tree(*target, s, tree, 0.0, nullptr);
  EXPECT_EQ(res.accepted_nodes, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(res.committed, (std::vector<Token>{g[1], g[2], g[3]}));
}

TEST(VerifyTree, CompactedCacheMatchesFreshForward) {
  auto target = tiny_target(6);
  const Sequence prompt = random_tokens(5, 8, 6);
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    TargetState s = prefill(*target, prompt, 4);
    const DraftTree tree = two_level_tree({0, 1, 2}, {3, 5});
    const auto res = verify_tree(*target, s, tree, 1.0, &rng);
    KvCache fresh = target->make_cache();
    const auto out = target->forward(
        std::span<const Token>(s.tokens.data(), s.tokens.size() - 1), fresh);
    EXPECT_TRUE(s.cache == fresh);
    ASSERT_EQ(res.taps.positions(), res.accepted_count + 1);
    for (std::size_t r = 0; r < res.taps.positions(); ++r) {
      const auto a = res.taps.mid.row_span(r);
      const auto b = out.taps.mid.row_span(prompt.size() + r);
      EXPECT_EQ(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
    }
  }
}

TEST(VerifyTree, FirstTokenMarginalEqualsTarget) {
  auto target = tiny_target(7, testing::tiny_config(4, 16, 3, 2, 48));
  const Sequence prompt = random_tokens(4, 4, 3);
  Sequence ctx = prompt;
  ctx.push_back(2);
  const Dist p = next_dist(*target, ctx);
  const DraftTree tree = two_level_tree({3, 1}, {0, 2});
  Rng rng(9);
  std::vector<double> count(4, 0.0);
  const int trials = 40000;
  for (int i = 0; i < trials; ++i) {
    TargetState s = prefill(*target, prompt, 2);
    count[verify_tree(*target, s, tree, 1.0, &rng).committed[0]] += 1.0;
  }
  for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(count[v] / trials, p[v], 0.01);
}

TEST(VerifyTree, RejectsDuplicateSiblingsAndBadTokens) {
  auto target = tiny_target(6);
  const Sequence prompt = random_tokens(4, 8, 1);
  TargetState s = prefill(*target, prompt, 1);
  EXPECT_THROW(verify_tree(*target, s, two_level_tree({2, 2}, {}), 0.0, nullptr),
               std::invalid_argument);
  EXPECT_THROW(verify_tree(*target, s, two_level_tree({9}, {}), 0.0, nullptr),
               std::invalid_argument);
}

TEST(TreeVerifyMask, PendingRowThenNodes) {
  const DraftTree t = two_level_tree({1, 2}, {3});
  const AttentionMask m = tree_verify_mask(t, 2);
  ASSERT_EQ(m.queries, 4u);
  ASSERT_EQ(m.keys, 6u);
  const std::vector<std::vector<int>> expected = {
      {1, 1, 1, 0, 0, 0}, {1, 1, 1, 1, 0, 0}, {1, 1, 1, 0, 1, 0}, {1, 1, 1, 1, 0, 1}};
  for (std::size_t q = 0; q < 4; ++q) {
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(m.allowed(q, k), expected[q][k] == 1) << q << k;
  }
}

// ---------------------------------------------------------------------------
// Enumeration

ConditionalDist table_conditional(std::uint64_t seed, std::size_t vocab, double scale) {
  return memoize([seed, vocab, scale](std::span<const Token> ctx) {
    std::uint64_t h = seed;
    for (Token t : ctx) h = derive_seed(h, t + 1);
    Rng rng(h);
    std::vector<double> logits(vocab);
    for (double& l : logits) l = scale * rng.normal();
    return Dist::from_logits(logits);
  });
}

double total_mass(const SequenceDistribution& d) {
  double z = 0.0;
  for (const auto& [seq, p] : d) z += p;
  return z;
}

TEST(Enumeration, AutoregressiveDistributionIsNormalized) {
  const auto p = table_conditional(1, 3, 1.0);
  const Sequence prompt = {0};
  const auto d = autoregressive_distribution(p, prompt, 3);
  EXPECT_EQ(d.size(), 27u);
  EXPECT_NEAR(total_mass(d), 1.0, 1e-12);
}

TEST(Enumeration, ChainSpeculationIsLossless) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto p = table_conditional(10 + seed, 4, 1.5);
    const auto q = table_conditional(50 + seed, 4, 1.5);
    const Sequence prompt = {1, 2};
    const auto ref = autoregressive_distribution(p, prompt, 4);
    for (std::size_t depth = 1; depth <= 3; ++depth) {
      const auto spec = spec_output_distribution(p, q, prompt, depth, 4);
      EXPECT_NEAR(total_mass(spec), 1.0, 1e-12);
      EXPECT_LT(total_variation(ref, spec), 1e-12) << seed << " " << depth;
    }
  }
}

TEST(Enumeration, TreeSpeculationIsLossless) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto p = table_conditional(20 + seed, 4, 1.5);
    const auto q = table_conditional(70 + seed, 4, 1.5);
    const Sequence prompt = {3};
    TreeConfig cfg;
    cfg.depth = 3;
    cfg.expand_k = 2;
    cfg.children = 3;
    cfg.total_tokens = 5;
    const auto ref = autoregressive_distribution(p, prompt, 4);
    EXPECT_LT(total_variation(ref, tree_output_distribution(p, q, prompt, cfg, 4)), 1e-12);
  }
}

TEST(Enumeration, SingleBranchTreeMatchesChainWithPointMassDrafts) {
  // A tree with one child per level proposes the drafter's top token, i.e.
  // a chain drafted from point masses; both emit the target distribution.
  const auto p = table_conditional(33, 4, 1.5);
  const auto q = table_conditional(44, 4, 1.5);
  const ConditionalDist q_top = [q](std::span<const Token> ctx) {
    const Dist d = q(ctx);
    return point_mass(d.size(), greedy(d.probs));
  };
  const Sequence prompt = {0, 3};
  TreeConfig cfg;
  cfg.depth = 3;
  cfg.expand_k = 1;
  cfg.children = 1;
  cfg.total_tokens = 3;
  const auto chain = spec_output_distribution(p, q_top, prompt, 3, 4);
  const auto tree = tree_output_distribution(p, q, prompt, cfg, 4);
  EXPECT_LT(total_variation(chain, tree), 1e-12);
  EXPECT_LT(total_variation(chain, autoregressive_distribution(p, prompt, 4)), 1e-12);
}

TEST(Enumeration, DetectsWrongTarget) {
  // The oracle is sensitive: speculation against the drafter's own
  // distribution is far from the target's.
  const auto p = table_conditional(5, 4, 1.5);
  const auto q = table_conditional(6, 4, 1.5);
  const Sequence prompt = {0};
  const auto ref = autoregressive_distribution(p, prompt, 3);
  EXPECT_GT(total_variation(ref, spec_output_distribution(q, q, prompt, 2, 3)), 0.05);
}

TEST(Enumeration, ModelPairsViaCheckModule) {
  LosslessOptions o;
  o.pairs = 4;
  const auto r = check_lossless(o);
  EXPECT_EQ(r.cases.size(), 8u);
  EXPECT_LT(r.max_tv, 1e-9);
}

TEST(Enumeration, RejectsLargeProblems) {
  const auto p = table_conditional(1, 17, 1.0);
  const Sequence prompt = {0};
  EXPECT_THROW(spec_output_distribution(p, p, prompt, 1, 2), std::length_error);
  const auto small = table_conditional(1, 4, 1.0);
  EXPECT_THROW(spec_output_distribution(small, small, prompt, 4, 2), std::length_error);
}

TEST(ConditionalDrafter, ProposesLogOfQ) {
  const ConditionalDist q = [](std::span<const Token>) { return Dist({0.25, 0.75, 0.0}); };
  const ConditionalDrafter d(q);
  auto s = d.start();
  const Sequence toks = {0, 1};
  const auto root = s->sync(toks, {});
  const Dist back = Dist::from_logits(root.logits);
  EXPECT_NEAR(back[0], 0.25, 1e-12);
  EXPECT_NEAR(back[1], 0.75, 1e-12);
  EXPECT_EQ(back[2], 0.0);
}

}  // namespace
}  // namespace sdlab
