#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "sdlab/drafter.hpp"
#include "sdlab/model.hpp"
#include "sdlab/sampling.hpp"
#include "sdlab/tree.hpp"

namespace sdlab {

// Target side of a decoding session. The last token is pending: it is
// committed but not yet in the cache.
struct TargetState {
  std::vector<Token> tokens;
  KvCache cache;
};

struct VerificationResult {
  std::size_t accepted_count = 0;
  // Accepted draft tokens followed by one replacement or bonus token.
  std::vector<Token> committed;
  // Tree indices of the accepted nodes (tree verification only).
  std::vector<std::size_t> accepted_nodes;
  // Target taps of the rows that entered the cache: the previously pending
  // token and every accepted draft token.
  LayerTaps taps;
};

// One target forward over the pending token and the draft. T = 0 accepts
// exact argmax matches; T > 0 accepts with min(1, p/q) and resamples from
// the residual on the first rejection. The cache is rolled back to the
// committed frontier.
VerificationResult verify_chain(const TargetModel& target, TargetState& state,
                                std::span<const Token> draft, std::span<const Dist> draft_dists,
                                double temperature, Rng* rng);

// Tree verification with one masked forward. Children are deterministic
// candidates, so the sibling rule is speculative sampling with point-mass
// proposals: accept child x with the current p(x), otherwise zero p(x) and
// renormalize; after the last child, sample from what remains. Accepted
// rows are compacted into sequential cache positions.
VerificationResult verify_tree(const TargetModel& target, TargetState& state,
                               const DraftTree& tree, double temperature, Rng* rng);

// Query mask of a tree verification forward: the pending token sees the
// cached prefix and itself, node i sees the prefix, the pending token, its
// ancestors and itself.
AttentionMask tree_verify_mask(const DraftTree& tree, std::size_t cached);

// ---------------------------------------------------------------------------
// Exact enumeration over small vocabularies.

using ConditionalDist = std::function<Dist(std::span<const Token> context)>;
using SequenceDistribution = std::map<std::vector<Token>, double>;

// Caches results by context; the returned function owns its table.
ConditionalDist memoize(ConditionalDist f);
// Next-token distribution of `model` at `temperature` (> 0) after `context`.
ConditionalDist model_conditional(std::shared_ptr<const TargetModel> model, double temperature);

// Drafter whose proposals are a conditional distribution (logits log q).
class ConditionalDrafter : public Drafter {
 public:
  ConditionalDrafter(ConditionalDist q, std::string id = "conditional");
  std::string id() const override { return id_; }
  std::unique_ptr<DraftSession> start(std::uint64_t seed = 0) const override;
  double step_flops(std::size_t) const override { return 0.0; }

 private:
  ConditionalDist q_;
  std::string id_;
};

// Distribution of the first `length` tokens sampled autoregressively.
SequenceDistribution autoregressive_distribution(const ConditionalDist& target,
                                                 std::span<const Token> prompt,
                                                 std::size_t length);

// Exact distribution of the first `length` tokens emitted by chain
// speculative sampling with `depth` drafts per cycle. Requires |V| <= 16
// and depth <= 3.
SequenceDistribution spec_output_distribution(const ConditionalDist& target,
                                              const ConditionalDist& drafter,
                                              std::span<const Token> prompt, std::size_t depth,
                                              std::size_t length);

// Same for tree drafting (expand_tree at T = 1 over the drafter, then the
// tree verification rule). Requires |V| <= 16 and tree depth <= 3.
SequenceDistribution tree_output_distribution(const ConditionalDist& target,
                                              const ConditionalDist& drafter,
                                              std::span<const Token> prompt,
                                              const TreeConfig& config, std::size_t length);

double total_variation(const SequenceDistribution& a, const SequenceDistribution& b);

}  // namespace sdlab
