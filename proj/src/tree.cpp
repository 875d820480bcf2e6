#include "sdlab/tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace sdlab {

void TreeConfig::validate() const {
  if (depth == 0) throw std::invalid_argument("tree config: depth must be >= 1");
  if (total_tokens < depth) throw std::invalid_argument("tree config: total_tokens must be >= depth");
  if (expand_k == 0) throw std::invalid_argument("tree config: expand_k must be >= 1");
  if (children == 0) throw std::invalid_argument("tree config: children must be >= 1");
}

std::map<std::string, std::string> TreeConfig::to_kv() const {
  return {{"tree.total_tokens", std::to_string(total_tokens)},
          {"tree.depth", std::to_string(depth)},
          {"tree.expand_k", std::to_string(expand_k)},
          {"tree.children", std::to_string(children)}};
}

TreeConfig TreeConfig::large() { return {60, 8, 10, 10}; }

std::vector<std::size_t> DraftTree::ancestors(std::size_t i) const {
  std::vector<std::size_t> out;
  for (int p = nodes.at(i).parent; p != kTreeRoot; p = nodes[p].parent) {
    out.push_back(static_cast<std::size_t>(p));
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> DraftTree::children(int parent) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].parent == parent) out.push_back(i);
  }
  return out;
}

void DraftTree::validate() const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const DraftNode& n = nodes[i];
    if (n.parent == kTreeRoot) {
      if (n.depth != 1) throw std::invalid_argument("draft tree: root child must have depth 1");
    } else if (n.parent < 0 || static_cast<std::size_t>(n.parent) >= i) {
      throw std::invalid_argument("draft tree: parent must precede child");
    } else if (n.depth != nodes[n.parent].depth + 1) {
      throw std::invalid_argument("draft tree: depth must be parent depth + 1");
    }
  }
}

namespace {

// Top `count` tokens by probability, lowest id first among ties.
std::vector<Token> top_tokens(const Dist& d, std::size_t count) {
  std::vector<Token> order(d.size());
  std::iota(order.begin(), order.end(), Token{0});
  count = std::min(count, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](Token a, Token b) { return d[a] > d[b] || (d[a] == d[b] && a < b); });
  order.resize(count);
  return order;
}

void add_children(DraftTree& tree, int parent, const std::vector<double>& logits,
                  const TreeConfig& config, double temperature) {
  const Dist d = Dist::from_logits(logits, temperature > 0.0 ? temperature : 1.0);
  const double base = parent == kTreeRoot ? 0.0 : tree.nodes[parent].log_score;
  const std::size_t depth = parent == kTreeRoot ? 1 : tree.nodes[parent].depth + 1;
  for (Token t : top_tokens(d, config.children)) {
    if (d[t] <= 0.0) break;
    DraftNode node;
    node.token = t;
    node.parent = parent;
    node.depth = depth;
    node.dist = d;
    node.log_score = base + std::log(d[t]);
    tree.nodes.push_back(std::move(node));
  }
}

}  // namespace

DraftTree expand_tree(DraftSession& session, const DraftOutput& root, const TreeConfig& config,
                      double temperature) {
  config.validate();
  if (temperature < 0.0) throw std::invalid_argument("expand_tree: negative temperature");
  DraftTree tree;
  add_children(tree, kTreeRoot, root.logits, config, temperature);
  std::size_t level_begin = 0;
  for (std::size_t depth = 1; depth < config.depth; ++depth) {
    const std::size_t level_end = tree.size();
    std::vector<std::size_t> level(level_end - level_begin);
    std::iota(level.begin(), level.end(), level_begin);
    const std::size_t pick = std::min(config.expand_k, level.size());
    std::partial_sort(level.begin(), level.begin() + static_cast<std::ptrdiff_t>(pick), level.end(),
                      [&](std::size_t a, std::size_t b) {
                        const DraftNode& x = tree.nodes[a];
                        const DraftNode& y = tree.nodes[b];
                        if (x.log_score != y.log_score) return x.log_score > y.log_score;
                        if (x.token != y.token) return x.token < y.token;
                        return a < b;
                      });
    level.resize(pick);
    std::sort(level.begin(), level.end());
    if (level.empty()) break;

    std::vector<DraftRequest> requests;
    for (std::size_t i : level) {
      const DraftNode& n = tree.nodes[i];
      DraftRequest req;
      req.parent = n.parent == kTreeRoot ? root.handle : tree.nodes[n.parent].handle;
      req.token = n.token;
      for (std::size_t a : tree.ancestors(i)) req.ancestors.push_back(tree.nodes[a].handle);
      requests.push_back(std::move(req));
    }
    const auto outs = session.expand(requests);
    for (std::size_t r = 0; r < level.size(); ++r) {
      tree.nodes[level[r]].expanded = true;
      tree.nodes[level[r]].handle = outs[r].handle;
    }
    for (std::size_t r = 0; r < level.size(); ++r) {
      add_children(tree, static_cast<int>(level[r]), outs[r].logits, config, temperature);
    }
    level_begin = level_end;
  }
  return tree;
}

DraftTree rerank_prune(const DraftTree& tree, std::size_t total_tokens) {
  tree.validate();
  const std::size_t n = tree.size();
  if (total_tokens >= n) return tree;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const DraftNode& x = tree.nodes[a];
    const DraftNode& y = tree.nodes[b];
    if (x.log_score != y.log_score) return x.log_score > y.log_score;
    if (x.depth != y.depth) return x.depth < y.depth;
    return x.token < y.token;
  });
  std::vector<bool> keep(n, false);
  for (std::size_t i = 0; i < total_tokens; ++i) {
    for (int p = static_cast<int>(order[i]); p != kTreeRoot && !keep[p]; p = tree.nodes[p].parent) {
      keep[p] = true;
    }
  }
  DraftTree out;
  std::vector<int> remap(n, kTreeRoot);
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    DraftNode node = tree.nodes[i];
    if (node.parent != kTreeRoot) node.parent = remap[node.parent];
    remap[i] = static_cast<int>(out.nodes.size());
    out.nodes.push_back(std::move(node));
  }
  return out;
}

AttentionMask build_tree_mask(const DraftTree& tree, std::size_t prefix_len) {
  tree.validate();
  const std::size_t n = tree.size();
  AttentionMask mask(n, prefix_len + n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < prefix_len; ++j) mask.set(i, j);
    for (std::size_t a : tree.ancestors(i)) mask.set(i, prefix_len + a);
    mask.set(i, prefix_len + i);
  }
  return mask;
}

std::string dump_tree(const DraftTree& tree) {
  std::string out;
  char buf[96];
  // Depth-first so each subtree is printed under its parent.
  std::vector<std::size_t> stack;
  const auto push_children = [&](int parent) {
    const auto kids = tree.children(parent);
    stack.insert(stack.end(), kids.rbegin(), kids.rend());
  };
  push_children(kTreeRoot);
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const DraftNode& n = tree.nodes[i];
    out.append(2 * (n.depth - 1), ' ');
    std::snprintf(buf, sizeof buf, "[%zu] token=%u depth=%zu score=%.6f\n", i, n.token, n.depth,
                  n.log_score);
    out += buf;
    push_children(static_cast<int>(i));
  }
  return out;
}

}  // namespace sdlab
