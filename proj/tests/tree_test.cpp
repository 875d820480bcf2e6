#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sdlab/tree.hpp"
#include "test_util.hpp"

namespace sdlab {
namespace {

using testing::random_tokens;
using testing::tiny_target;

DraftNode node(Token token, int parent, std::size_t depth, double score) {
  DraftNode n;
  n.token = token;
  n.parent = parent;
  n.depth = depth;
  n.log_score = score;
  return n;
}

// Random tree whose scores decrease along every path, like cumulative log
// confidences.
DraftTree random_tree(std::size_t n, Rng& rng) {
  DraftTree t;
  std::vector<std::set<Token>> used(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int parent = i == 0 || rng.uniform() < 0.3 ? kTreeRoot : static_cast<int>(rng.below(i));
    const std::size_t slot = parent == kTreeRoot ? n : static_cast<std::size_t>(parent);
    Token tok = static_cast<Token>(rng.below(64));
    while (used[slot].count(tok)) tok = (tok + 1) % 64;
    used[slot].insert(tok);
    const double base = parent == kTreeRoot ? 0.0 : t.nodes[parent].log_score;
    const std::size_t depth = parent == kTreeRoot ? 1 : t.nodes[parent].depth + 1;
    // Quantized so ties occur.
    t.nodes.push_back(node(tok, parent, depth, base - 0.25 * static_cast<double>(rng.below(4))));
  }
  return t;
}

bool ancestor_closed(const DraftTree& t, const std::vector<bool>& in) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (in[i] && t.nodes[i].parent != kTreeRoot && !in[t.nodes[i].parent]) return false;
  }
  return true;
}

TEST(DraftTree, AncestorsChildrenValidate) {
  DraftTree t;
  t.nodes = {node(1, kTreeRoot, 1, -0.1), node(2, 0, 2, -0.2), node(3, 1, 3, -0.3),
             node(4, kTreeRoot, 1, -0.5)};
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.ancestors(2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(t.children(kTreeRoot), (std::vector<std::size_t>{0, 3}));
  t.nodes[2].depth = 2;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t.nodes[2].depth = 3;
  t.nodes[1].parent = 2;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(TreeMask, PrefixAncestorsAndSelf) {
  DraftTree t;
  t.nodes = {node(1, kTreeRoot, 1, 0), node(2, 0, 2, 0), node(3, kTreeRoot, 1, 0)};
  const AttentionMask m = build_tree_mask(t, 2);
  ASSERT_EQ(m.queries, 3u);
  ASSERT_EQ(m.keys, 5u);
  const std::vector<std::vector<int>> expected = {
      {1, 1, 1, 0, 0}, {1, 1, 1, 1, 0}, {1, 1, 0, 0, 1}};
  for (std::size_t q = 0; q < 3; ++q) {
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(m.allowed(q, k), expected[q][k] == 1) << q << k;
  }
}

TEST(RerankPrune, OptimalAmongAncestorClosedSubsets) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 3 + rng.below(9);
    const DraftTree t = random_tree(n, rng);
    for (std::size_t budget = 1; budget <= n; ++budget) {
      double best = -1e300;
      for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != budget) continue;
        std::vector<bool> in(n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          in[i] = (mask >> i) & 1u;
          if (in[i]) sum += t.nodes[i].log_score;
        }
        if (ancestor_closed(t, in)) best = std::max(best, sum);
      }
      const DraftTree p = rerank_prune(t, budget);
      ASSERT_EQ(p.size(), budget);
      EXPECT_NO_THROW(p.validate());
      double got = 0.0;
      for (const DraftNode& d : p.nodes) got += d.log_score;
      EXPECT_NEAR(got, best, 1e-12);
    }
  }
}

TEST(RerankPrune, KeepsTokenPathsAndScores) {
  DraftTree t;
  t.nodes = {node(1, kTreeRoot, 1, -0.1), node(2, kTreeRoot, 1, -2.0), node(3, 0, 2, -0.2),
             node(4, 2, 3, -0.4), node(5, 1, 2, -2.5)};
  const DraftTree p = rerank_prune(t, 3);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.nodes[0].token, 1u);
  EXPECT_EQ(p.nodes[1].token, 3u);
  EXPECT_EQ(p.nodes[1].parent, 0);
  EXPECT_EQ(p.nodes[2].token, 4u);
  EXPECT_EQ(p.nodes[2].parent, 1);
  EXPECT_EQ(rerank_prune(t, 10).size(), 5u);
}

TEST(ExpandTree, StructureAndScores) {
  auto target = tiny_target();
  const TransformerDrafter drafter(target, "identity");
  auto session = drafter.start();
  const Sequence toks = random_tokens(6, 8, 5);
  const DraftOutput root = session->sync(toks, {});
  TreeConfig cfg;
  cfg.depth = 3;
  cfg.expand_k = 2;
  cfg.children = 3;
  cfg.total_tokens = 5;
  const DraftTree t = expand_tree(*session, root, cfg, 0.0);
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.size(), 3u + 2u * 3u + 2u * 3u);
  // Root children: top-3 of the target distribution, best first.
  const Dist d0 = Dist::from_logits(root.logits);
  EXPECT_EQ(t.nodes[0].token, greedy(root.logits));
  EXPECT_NEAR(t.nodes[0].log_score, std::log(d0[t.nodes[0].token]), 1e-12);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const DraftNode& n = t.nodes[i];
    const double parent = n.parent == kTreeRoot ? 0.0 : t.nodes[n.parent].log_score;
    EXPECT_NEAR(n.log_score, parent + std::log(n.dist[n.token]), 1e-12);
    EXPECT_LE(n.depth, 3u);
  }
  // Every expanded node's child distribution equals the target's next-token
  // distribution after that node's path.
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto kids = t.children(static_cast<int>(i));
    if (kids.empty()) continue;
    EXPECT_TRUE(t.nodes[i].expanded);
    Sequence path = toks;
    for (std::size_t a : t.ancestors(i)) path.push_back(t.nodes[a].token);
    path.push_back(t.nodes[i].token);
    KvCache c = target->make_cache();
    const auto out = target->forward(path, c);
    const Dist ref = Dist::from_logits(out.logits.row_span(path.size() - 1));
    EXPECT_LT(testing::max_abs_diff(ref.probs, t.nodes[kids[0]].dist.probs), 1e-12);
  }
}

TEST(ExpandTree, SkipsZeroProbabilityChildren) {
  class PeakedSession : public DraftSession {
   public:
    DraftOutput sync(std::span<const Token>, const LayerTaps&) override { return out(0); }
    std::vector<DraftOutput> expand(std::span<const DraftRequest> r) override {
      std::vector<DraftOutput> o;
      for (std::size_t i = 0; i < r.size(); ++i) o.push_back(out(++rows_));
      return o;
    }
    void discard_speculation() override {}

   private:
    static DraftOutput out(std::size_t h) { return {{0.0, -1e300, -1e300, -1e300}, h}; }
    std::size_t rows_ = 0;
  };
  PeakedSession s;
  const Sequence toks = {0, 1};
  TreeConfig cfg;
  cfg.depth = 2;
  cfg.children = 3;
  cfg.expand_k = 3;
  const DraftTree t = expand_tree(s, s.sync(toks, {}), cfg, 0.0);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.nodes[1].parent, 0);
}

TEST(DumpTree, DepthFirstIndented) {
  DraftTree t;
  t.nodes = {node(1, kTreeRoot, 1, -0.5), node(2, kTreeRoot, 1, -1.0), node(3, 0, 2, -0.75)};
  EXPECT_EQ(dump_tree(t),
            "[0] token=1 depth=1 score=-0.500000\n"
            "  [2] token=3 depth=2 score=-0.750000\n"
            "[1] token=2 depth=1 score=-1.000000\n");
}

TEST(TreeConfig, Validation) {
  TreeConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_NO_THROW(TreeConfig::large().validate());
  c.total_tokens = 2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TreeConfig{};
  c.children = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace sdlab
