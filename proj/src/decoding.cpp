#include "sdlab/decoding.hpp"

#include <sstream>
#include <stdexcept>

namespace sdlab {

void DecodeConfig::validate() const {
  if (temperature < 0.0) throw std::invalid_argument("decode: negative temperature");
  if (depth == 0) throw std::invalid_argument("decode: depth must be >= 1");
  if (use_tree) tree.validate();
}

std::map<std::string, std::string> DecodeConfig::to_kv() const {
  std::ostringstream t;
  t.precision(17);
  t << temperature;
  auto kv = tree.to_kv();
  kv["decode.temperature"] = t.str();
  kv["decode.use_tree"] = use_tree ? "1" : "0";
  kv["decode.depth"] = std::to_string(depth);
  kv["decode.max_new_tokens"] = std::to_string(max_new_tokens);
  return kv;
}

DecodeResult speculative_decode(const TargetModel& target, const Drafter& drafter,
                                std::span<const Token> prompt, const DecodeConfig& config,
                                std::uint64_t seed) {
  config.validate();
  if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
  const std::size_t lookahead = config.use_tree ? config.tree.depth : config.depth;
  if (prompt.size() + config.max_new_tokens + lookahead + 1 > target.config().max_seq_len) {
    throw std::length_error("decode: max_seq_len exceeded");
  }
  DecodeResult result;
  if (config.max_new_tokens == 0) return result;

  const double temp = config.temperature;
  Rng rng(derive_seed(seed, 0));
  TargetState state{std::vector<Token>(prompt.begin(), prompt.end()), target.make_cache()};
  auto pre = target.forward(prompt, state.cache);
  const auto last = pre.logits.row_span(pre.logits.rows() - 1);
  const Token first = temp == 0.0 ? greedy(last) : sample(Dist::from_logits(last, temp), rng);
  state.tokens.push_back(first);
  result.tokens.push_back(first);
  LayerTaps fresh = std::move(pre.taps);

  auto session = drafter.start(derive_seed(seed, 1));
  while (result.tokens.size() < config.max_new_tokens) {
    const DraftOutput root = session->sync(state.tokens, fresh);
    CycleRecord cycle;
    VerificationResult res;
    if (config.use_tree) {
      const DraftTree tree =
          rerank_prune(expand_tree(*session, root, config.tree, temp), config.tree.total_tokens);
      for (const DraftNode& n : tree.nodes) cycle.draft.push_back(n.token);
      res = verify_tree(target, state, tree, temp, &rng);
      if (config.keep_trees) cycle.tree = tree;
    } else {
      const DraftChain chain = draft_chain(*session, root, config.depth, temp, &rng);
      cycle.draft = chain.tokens;
      res = verify_chain(target, state, chain.tokens, chain.dists, temp, &rng);
    }
    cycle.accepted = res.accepted_count;
    cycle.committed = res.committed.size();
    result.cycles.push_back(std::move(cycle));
    result.tokens.insert(result.tokens.end(), res.committed.begin(), res.committed.end());
    fresh = std::move(res.taps);
  }
  result.tokens.resize(config.max_new_tokens);
  return result;
}

}  // namespace sdlab
