#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "sdlab/autodiff.hpp"
#include "sdlab/drafter.hpp"
#include "sdlab/sampling.hpp"

namespace sdlab {

struct TreeConfig {
  std::size_t total_tokens = 16;  // node budget after pruning
  std::size_t depth = 5;
  std::size_t expand_k = 3;  // nodes expanded per level
  std::size_t children = 3;  // top tokens proposed per expanded node

  void validate() const;
  std::map<std::string, std::string> to_kv() const;

  // Budget for large targets: 60 nodes, depth 8, 10 expansions per level,
  // 10 children each.
  static TreeConfig large();
};

constexpr int kTreeRoot = -1;

struct DraftNode {
  Token token = 0;
  int parent = kTreeRoot;  // kTreeRoot: child of the pending committed token
  std::size_t depth = 1;
  Dist dist;  // draft distribution the token was ranked in
  double log_score = 0.0;  // sum of log confidences from the root
  bool expanded = false;
  std::size_t handle = 0;  // draft row, valid when expanded
};

// Nodes in topological order (parent index < child index).
struct DraftTree {
  std::vector<DraftNode> nodes;

  std::size_t size() const { return nodes.size(); }
  // Ancestor indices of `i`, root-most first, excluding `i`.
  std::vector<std::size_t> ancestors(std::size_t i) const;
  std::vector<std::size_t> children(int parent) const;
  // Throws std::invalid_argument when order, depths or parents are broken.
  void validate() const;
};

// Level-by-level growth: at each level the expand_k highest-scoring nodes
// are evaluated by the drafter and each receives its top `children` tokens.
// Confidence is the token's probability under softmax(logits / T), with
// T = 1 when drafting greedily.
DraftTree expand_tree(DraftSession& session, const DraftOutput& root, const TreeConfig& config,
                      double temperature);

// Keeps the `total_tokens` best nodes by (score desc, depth asc, token asc)
// and closes the set under ancestors; indices are renumbered.
DraftTree rerank_prune(const DraftTree& tree, std::size_t total_tokens);

// Tree-node queries over `prefix_len` prefix keys followed by the nodes:
// every prefix key, the node's ancestors, and itself.
AttentionMask build_tree_mask(const DraftTree& tree, std::size_t prefix_len);

// One line per node: indentation by depth, then token, depth and score.
std::string dump_tree(const DraftTree& tree);

}  // namespace sdlab
