#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdlab/drafter.hpp"
#include "sdlab/model.hpp"
#include "sdlab/tree.hpp"
#include "sdlab/verifier.hpp"

namespace sdlab {

struct DecodeConfig {
  double temperature = 0.0;
  bool use_tree = false;
  std::size_t depth = 4;  // chain drafts per cycle
  TreeConfig tree;
  std::size_t max_new_tokens = 64;
  bool keep_trees = false;  // store each cycle's pruned tree (not part of to_kv)

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
};

struct CycleRecord {
  std::vector<Token> draft;  // chain tokens, or tree node tokens in index order
  std::size_t accepted = 0;
  std::size_t committed = 0;  // accepted + 1
  DraftTree tree;  // only with DecodeConfig::keep_trees
};

struct DecodeResult {
  std::vector<Token> tokens;  // exactly max_new_tokens generated tokens
  std::vector<CycleRecord> cycles;
};

// Draft-then-verify decoding. The first token comes from the prefill
// forward; every later token from a verification cycle. Randomness (target
// and drafter) is derived from `seed`.
DecodeResult speculative_decode(const TargetModel& target, const Drafter& drafter,
                                std::span<const Token> prompt, const DecodeConfig& config,
                                std::uint64_t seed);

}  // namespace sdlab
