#include <gtest/gtest.h>

#include "sdlab/drafter.hpp"
#include "test_util.hpp"

namespace sdlab {
namespace {

using testing::random_tokens;
using testing::tiny_target;

TEST(SpeculativeMask, CommittedAncestorsAndSelf) {
  const std::vector<DraftRequest> reqs = {{2, 1, {}}, {4, 2, {4}}};
  const AttentionMask m = speculative_mask(3, 5, reqs);
  ASSERT_EQ(m.keys, 7u);
  // Row 0: committed 0..2 and itself (key 5).
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(m.allowed(0, k), k < 3 || k == 5) << k;
  // Row 1: committed, speculative ancestor 4, itself (key 6).
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(m.allowed(1, k), k < 3 || k == 4 || k == 6) << k;
  const std::vector<DraftRequest> bad = {{2, 1, {1}}};
  EXPECT_THROW(speculative_mask(3, 5, bad), std::invalid_argument);
}

TEST(IdentityDrafter, ProposesTargetNextTokenDistribution) {
  auto target = tiny_target();
  const TransformerDrafter drafter(target, "identity");
  auto session = drafter.start();
  const Sequence toks = random_tokens(7, 8, 1);
  const DraftOutput root = session->sync(toks, {});
  KvCache cache = target->make_cache();
  const auto out = target->forward(toks, cache);
  const auto last = out.logits.row_span(6);
  EXPECT_EQ(root.logits, std::vector<double>(last.begin(), last.end()));
}

TEST(IdentityDrafter, ChainEqualsGreedyContinuation) {
  auto target = tiny_target();
  const TransformerDrafter drafter(target, "identity");
  auto session = drafter.start();
  const Sequence prompt = random_tokens(5, 8, 2);
  const auto greedy_tokens = generate(*target, prompt, 5, 0.0, nullptr);
  Sequence committed = prompt;
  committed.push_back(greedy_tokens[0]);
  const DraftOutput root = session->sync(committed, {});
  const DraftChain chain = draft_chain(*session, root, 4, 0.0, nullptr);
  EXPECT_EQ(chain.tokens, std::vector<Token>(greedy_tokens.begin() + 1, greedy_tokens.end()));
  ASSERT_EQ(chain.handles.size(), 4u);
  EXPECT_EQ(chain.handles[0], root.handle);
  for (const Dist& d : chain.dists) EXPECT_TRUE(d.valid());
}

TEST(DraftSession, DiscardRestoresCommittedState) {
  auto target = tiny_target();
  const TransformerDrafter drafter(target, "identity");
  auto session = drafter.start();
  const Sequence toks = random_tokens(6, 8, 3);
  const DraftOutput root = session->sync(toks, {});
  draft_chain(*session, root, 3, 0.0, nullptr);
  const DraftOutput again = session->sync(toks, {});
  EXPECT_EQ(again.logits, root.logits);
  EXPECT_EQ(again.handle, root.handle);
  const DraftChain a = draft_chain(*session, again, 3, 0.0, nullptr);
  session->discard_speculation();
  const DraftChain b = draft_chain(*session, again, 3, 0.0, nullptr);
  EXPECT_EQ(a.tokens, b.tokens);
}

TEST(DraftSession, BatchedSiblingsMatchSeparateExpansion) {
  auto target = tiny_target();
  const TransformerDrafter drafter(target, "identity");
  const Sequence toks = random_tokens(6, 8, 4);
  auto s1 = drafter.start();
  const DraftOutput root = s1->sync(toks, {});
  const std::vector<DraftRequest> both = {{root.handle, 1, {}}, {root.handle, 5, {}}};
  const auto batched = s1->expand(both);
  for (std::size_t i = 0; i < 2; ++i) {
    auto s2 = drafter.start();
    s2->sync(toks, {});
    const auto single = s2->expand(std::span<const DraftRequest>(&both[i], 1));
    EXPECT_EQ(single[0].logits, batched[i].logits);
  }
}

TEST(LogitRewriteDrafter, AdversarialNeverProposesTheArgmax) {
  auto target = tiny_target();
  auto identity = std::make_shared<TransformerDrafter>(target, "identity");
  const LogitRewriteDrafter adv(identity, LogitRewriteDrafter::Mode::kAdversarial);
  EXPECT_EQ(adv.id(), "adversarial-identity");
  auto a = adv.start();
  auto b = identity->start();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Sequence toks = random_tokens(5, 8, s);
    const auto ra = a->sync(toks, {});
    const auto rb = b->sync(toks, {});
    EXPECT_NE(greedy(ra.logits), greedy(rb.logits));
    a = adv.start();
    b = identity->start();
  }
}

TEST(LogitRewriteDrafter, RandomIsSeedDeterministic) {
  auto target = tiny_target();
  auto identity = std::make_shared<TransformerDrafter>(target, "identity");
  const LogitRewriteDrafter rnd(identity, LogitRewriteDrafter::Mode::kUniformRandom);
  const Sequence toks = random_tokens(5, 8, 1);
  EXPECT_EQ(rnd.start(3)->sync(toks, {}).logits, rnd.start(3)->sync(toks, {}).logits);
  EXPECT_NE(rnd.start(3)->sync(toks, {}).logits, rnd.start(4)->sync(toks, {}).logits);
}

TEST(DraftChain, ArgumentErrors) {
  auto target = tiny_target();
  const TransformerDrafter drafter(target, "identity");
  auto session = drafter.start();
  const DraftOutput root = session->sync(random_tokens(4, 8, 1), {});
  EXPECT_THROW(draft_chain(*session, root, 0, 0.0, nullptr), std::invalid_argument);
  EXPECT_THROW(draft_chain(*session, root, 2, 1.0, nullptr), std::invalid_argument);
}

TEST(TransformerDrafter, SmallModelIsCheaper) {
  auto target = tiny_target();
  auto small = tiny_target(1, testing::tiny_config(8, 8, 1, 2));
  EXPECT_LT(TransformerDrafter(small, "vanilla").step_flops(10),
            TransformerDrafter(target, "identity").step_flops(10));
}

}  // namespace
}  // namespace sdlab
