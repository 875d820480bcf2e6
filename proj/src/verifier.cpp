#include "sdlab/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace sdlab {

namespace {

LayerTaps select_rows(const LayerTaps& taps, std::span<const std::size_t> rows) {
  LayerTaps out;
  for (std::size_t r : rows) out.append(taps.slice(r, 1));
  return out;
}

void check_sampling_args(double temperature, Rng* rng) {
  if (temperature < 0.0) throw std::invalid_argument("verify: negative temperature");
  if (temperature > 0.0 && !rng) throw std::invalid_argument("verify: rng required when T > 0");
}

void check_state(const TargetState& state) {
  if (state.tokens.empty() || state.cache.length() + 1 != state.tokens.size()) {
    throw std::invalid_argument("verify: cache must hold every committed token but the last");
  }
}

}  // namespace

VerificationResult verify_chain(const TargetModel& target, TargetState& state,
                                std::span<const Token> draft, std::span<const Dist> draft_dists,
                                double temperature, Rng* rng) {
  check_sampling_args(temperature, rng);
  check_state(state);
  const std::size_t vocab = target.config().vocab_size;
  if (temperature > 0.0) {
    if (draft_dists.size() != draft.size()) throw std::invalid_argument("verify: one Dist per draft token");
    for (const Dist& d : draft_dists) {
      if (d.size() != vocab) throw std::invalid_argument("verify: Dist/vocab mismatch");
    }
  }
  const std::size_t n = state.cache.length();
  std::vector<Token> input{state.tokens.back()};
  input.insert(input.end(), draft.begin(), draft.end());
  const auto out = target.forward(input, state.cache);

  VerificationResult res;
  Token final_token = 0;
  bool rejected = false;
  for (std::size_t i = 0; i < draft.size() && !rejected; ++i) {
    const auto row = out.logits.row_span(i);
    if (temperature == 0.0) {
      const Token best = greedy(row);
      if (draft[i] == best) {
        res.committed.push_back(draft[i]);
      } else {
        final_token = best;
        rejected = true;
      }
      continue;
    }
    const Dist p = Dist::from_logits(row, temperature);
    const Dist& q = draft_dists[i];
    if (rng->uniform() < acceptance_probability(p, q, draft[i])) {
      res.committed.push_back(draft[i]);
    } else {
      final_token = sample(residual(p, q), *rng);
      rejected = true;
    }
  }
  res.accepted_count = res.committed.size();
  if (!rejected) {
    const auto row = out.logits.row_span(draft.size());
    final_token = temperature == 0.0 ? greedy(row) : sample(Dist::from_logits(row, temperature), *rng);
  }
  res.committed.push_back(final_token);
  state.cache.truncate(n + 1 + res.accepted_count);
  res.taps = out.taps.slice(0, res.accepted_count + 1);
  state.tokens.insert(state.tokens.end(), res.committed.begin(), res.committed.end());
  return res;
}

AttentionMask tree_verify_mask(const DraftTree& tree, std::size_t cached) {
  const std::size_t n = tree.size();
  const AttentionMask nodes = build_tree_mask(tree, cached + 1);
  AttentionMask mask(n + 1, cached + 1 + n);
  for (std::size_t j = 0; j <= cached; ++j) mask.set(0, j);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < nodes.keys; ++j) {
      if (nodes.allowed(i, j)) mask.set(i + 1, j);
    }
  }
  return mask;
}

VerificationResult verify_tree(const TargetModel& target, TargetState& state,
                               const DraftTree& tree, double temperature, Rng* rng) {
  check_sampling_args(temperature, rng);
  check_state(state);
  tree.validate();
  const std::size_t vocab = target.config().vocab_size;
  for (int parent = kTreeRoot; parent < static_cast<int>(tree.size()); ++parent) {
    std::set<Token> seen;
    for (std::size_t c : tree.children(parent)) {
      if (tree.nodes[c].token >= vocab) throw std::invalid_argument("verify: tree token out of vocabulary");
      if (!seen.insert(tree.nodes[c].token).second) {
        throw std::invalid_argument("verify: sibling tokens must be distinct");
      }
    }
  }
  const std::size_t n = state.cache.length();
  std::vector<Token> input{state.tokens.back()};
  std::vector<std::size_t> positions{n};
  for (const DraftNode& node : tree.nodes) {
    input.push_back(node.token);
    positions.push_back(n + node.depth);
  }
  const AttentionMask mask = tree_verify_mask(tree, n);
  const auto out = target.forward(input, state.cache, &mask, positions);

  VerificationResult res;
  int cur = kTreeRoot;
  std::vector<std::size_t> rows{0};
  while (true) {
    const auto row = out.logits.row_span(cur == kTreeRoot ? 0 : static_cast<std::size_t>(cur) + 1);
    const auto kids = tree.children(cur);
    int next = kTreeRoot;
    Token final_token = 0;
    if (temperature == 0.0) {
      final_token = greedy(row);
      for (std::size_t c : kids) {
        if (tree.nodes[c].token == final_token) next = static_cast<int>(c);
      }
    } else {
      std::vector<double> p = softmax(row, temperature);
      for (std::size_t c : kids) {
        const Token x = tree.nodes[c].token;
        if (rng->uniform() < p[x]) {
          next = static_cast<int>(c);
          break;
        }
        const double rest = 1.0 - p[x];
        p[x] = 0.0;
        for (double& v : p) v /= rest;
      }
      if (next == kTreeRoot) final_token = sample(Dist(std::move(p)), *rng);
    }
    if (next == kTreeRoot) {
      res.committed.push_back(final_token);
      break;
    }
    res.accepted_nodes.push_back(static_cast<std::size_t>(next));
    res.committed.push_back(tree.nodes[next].token);
    rows.push_back(static_cast<std::size_t>(next) + 1);
    cur = next;
  }
  res.accepted_count = res.accepted_nodes.size();
  std::vector<std::size_t> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = i;
  for (std::size_t r : rows) keep.push_back(n + r);
  state.cache.keep_rows(keep);
  res.taps = select_rows(out.taps, rows);
  state.tokens.insert(state.tokens.end(), res.committed.begin(), res.committed.end());
  return res;
}

// ---------------------------------------------------------------------------
// Enumeration

ConditionalDist memoize(ConditionalDist f) {
  auto table = std::make_shared<std::map<std::vector<Token>, Dist>>();
  return [f = std::move(f), table](std::span<const Token> ctx) {
    std::vector<Token> key(ctx.begin(), ctx.end());
    auto it = table->find(key);
    if (it == table->end()) it = table->emplace(std::move(key), f(ctx)).first;
    return it->second;
  };
}

ConditionalDist model_conditional(std::shared_ptr<const TargetModel> model, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("model_conditional: temperature must be > 0");
  return [model = std::move(model), temperature](std::span<const Token> ctx) {
    KvCache cache = model->make_cache();
    const auto out = model->forward(ctx, cache);
    return Dist::from_logits(out.logits.row_span(out.logits.rows() - 1), temperature);
  };
}

namespace {

std::vector<double> log_probs(const Dist& d) {
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > 0.0 ? std::log(d[i]) : -1e300;
  return out;
}

class ConditionalSession : public DraftSession {
 public:
  explicit ConditionalSession(const ConditionalDist& q) : q_(q) {}

  DraftOutput sync(std::span<const Token> committed, const LayerTaps&) override {
    discard_speculation();
    if (committed.empty()) throw std::invalid_argument("draft sync: no committed tokens");
    contexts_.assign(1, std::vector<Token>(committed.begin(), committed.end()));
    return {log_probs(q_(contexts_[0])), 0};
  }

  std::vector<DraftOutput> expand(std::span<const DraftRequest> requests) override {
    std::vector<DraftOutput> out;
    for (const DraftRequest& r : requests) {
      if (r.parent >= contexts_.size()) throw std::invalid_argument("draft expand: unknown parent");
      std::vector<Token> ctx = contexts_[r.parent];
      ctx.push_back(r.token);
      out.push_back({log_probs(q_(ctx)), contexts_.size()});
      contexts_.push_back(std::move(ctx));
    }
    return out;
  }

  void discard_speculation() override {
    if (contexts_.size() > 1) contexts_.resize(1);
  }

 private:
  const ConditionalDist& q_;
  std::vector<std::vector<Token>> contexts_;
};

class Enumerator {
 public:
  Enumerator(const ConditionalDist& target, std::size_t prompt_len, std::size_t length)
      : target_(target), prompt_len_(prompt_len), length_(length) {}

  // True (and recorded) once `length` tokens have been emitted.
  bool finished(const std::vector<Token>& ctx, double w) {
    if (ctx.size() - prompt_len_ < length_) return false;
    std::vector<Token> emitted(ctx.begin() + static_cast<std::ptrdiff_t>(prompt_len_),
                               ctx.begin() + static_cast<std::ptrdiff_t>(prompt_len_ + length_));
    result_[emitted] += w;
    return true;
  }

  Dist target(const std::vector<Token>& ctx) const { return target_(ctx); }
  SequenceDistribution take() { return std::move(result_); }

 private:
  const ConditionalDist& target_;
  std::size_t prompt_len_, length_;
  SequenceDistribution result_;
};

void check_enumeration_bounds(std::size_t vocab, std::size_t depth) {
  if (vocab > 16) throw std::length_error("enumeration: vocabulary larger than 16");
  if (depth > 3) throw std::length_error("enumeration: depth larger than 3");
}

void chain_cycle(Enumerator& en, const ConditionalDist& drafter, std::vector<Token>& ctx,
                 double w, std::size_t accepted, std::size_t depth);

void chain_start(Enumerator& en, const ConditionalDist& drafter, std::vector<Token>& ctx,
                 double w, std::size_t depth) {
  if (w == 0.0 || en.finished(ctx, w)) return;
  chain_cycle(en, drafter, ctx, w, 0, depth);
}

void chain_cycle(Enumerator& en, const ConditionalDist& drafter, std::vector<Token>& ctx,
                 double w, std::size_t accepted, std::size_t depth) {
  if (w == 0.0 || en.finished(ctx, w)) return;
  const Dist p = en.target(ctx);
  check_enumeration_bounds(p.size(), depth);
  auto commit = [&](Token y, double wy) {
    ctx.push_back(y);
    chain_start(en, drafter, ctx, wy, depth);
    ctx.pop_back();
  };
  if (accepted == depth) {
    for (Token y = 0; y < p.size(); ++y) commit(y, w * p[y]);
    return;
  }
  const Dist q = drafter(ctx);
  if (q.size() != p.size()) throw std::invalid_argument("enumeration: Dist/vocab mismatch");
  double reject = 0.0;
  for (Token x = 0; x < q.size(); ++x) {
    if (q[x] <= 0.0) continue;
    const double a = acceptance_probability(p, q, x);
    reject += q[x] * (1.0 - a);
    if (a <= 0.0) continue;
    ctx.push_back(x);
    chain_cycle(en, drafter, ctx, w * q[x] * a, accepted + 1, depth);
    ctx.pop_back();
  }
  if (reject <= 0.0) return;
  Dist r;
  try {
    r = residual(p, q);
  } catch (const DegenerateResidual&) {
    return;  // rejection mass is rounding noise
  }
  for (Token y = 0; y < r.size(); ++y) commit(y, w * reject * r[y]);
}

void tree_start(Enumerator& en, const ConditionalDrafter& drafter, const TreeConfig& config,
                std::vector<Token>& ctx, double w);

void tree_walk(Enumerator& en, const ConditionalDrafter& drafter, const TreeConfig& config,
               const DraftTree& tree, int node, std::vector<Token>& ctx, double w) {
  if (w == 0.0 || en.finished(ctx, w)) return;
  std::vector<double> p = en.target(ctx).probs;
  double mass = w;
  for (std::size_t c : tree.children(node)) {
    const Token x = tree.nodes[c].token;
    const double px = p[x];
    ctx.push_back(x);
    tree_walk(en, drafter, config, tree, static_cast<int>(c), ctx, mass * px);
    ctx.pop_back();
    mass *= 1.0 - px;
    p[x] = 0.0;
    const double rest = 1.0 - px;
    if (rest <= 0.0) return;
    for (double& v : p) v /= rest;
  }
  for (Token y = 0; y < p.size(); ++y) {
    if (p[y] <= 0.0) continue;
    ctx.push_back(y);
    tree_start(en, drafter, config, ctx, mass * p[y]);
    ctx.pop_back();
  }
}

void tree_start(Enumerator& en, const ConditionalDrafter& drafter, const TreeConfig& config,
                std::vector<Token>& ctx, double w) {
  if (w == 0.0 || en.finished(ctx, w)) return;
  auto session = drafter.start();
  const DraftOutput root = session->sync(ctx, LayerTaps{});
  check_enumeration_bounds(root.logits.size(), config.depth);
  const DraftTree tree = rerank_prune(expand_tree(*session, root, config, 1.0), config.total_tokens);
  tree_walk(en, drafter, config, tree, kTreeRoot, ctx, w);
}

}  // namespace

ConditionalDrafter::ConditionalDrafter(ConditionalDist q, std::string id)
    : q_(std::move(q)), id_(std::move(id)) {}

std::unique_ptr<DraftSession> ConditionalDrafter::start(std::uint64_t) const {
  return std::make_unique<ConditionalSession>(q_);
}

SequenceDistribution autoregressive_distribution(const ConditionalDist& target,
                                                 std::span<const Token> prompt,
                                                 std::size_t length) {
  SequenceDistribution current{{{}, 1.0}};
  std::vector<Token> ctx(prompt.begin(), prompt.end());
  for (std::size_t step = 0; step < length; ++step) {
    SequenceDistribution next;
    for (const auto& [seq, w] : current) {
      std::vector<Token> c = ctx;
      c.insert(c.end(), seq.begin(), seq.end());
      const Dist p = target(c);
      if (p.size() > 16) throw std::length_error("enumeration: vocabulary larger than 16");
      for (Token y = 0; y < p.size(); ++y) {
        if (p[y] <= 0.0) continue;
        auto s = seq;
        s.push_back(y);
        next[s] += w * p[y];
      }
    }
    current = std::move(next);
  }
  return current;
}

SequenceDistribution spec_output_distribution(const ConditionalDist& target,
                                              const ConditionalDist& drafter,
                                              std::span<const Token> prompt, std::size_t depth,
                                              std::size_t length) {
  if (depth == 0) throw std::invalid_argument("enumeration: depth must be >= 1");
  check_enumeration_bounds(0, depth);
  Enumerator en(target, prompt.size(), length);
  std::vector<Token> ctx(prompt.begin(), prompt.end());
  chain_start(en, drafter, ctx, 1.0, depth);
  return en.take();
}

SequenceDistribution tree_output_distribution(const ConditionalDist& target,
                                              const ConditionalDist& drafter,
                                              std::span<const Token> prompt,
                                              const TreeConfig& config, std::size_t length) {
  config.validate();
  check_enumeration_bounds(0, config.depth);
  const ConditionalDrafter draft(drafter);
  Enumerator en(target, prompt.size(), length);
  std::vector<Token> ctx(prompt.begin(), prompt.end());
  tree_start(en, draft, config, ctx, 1.0);
  return en.take();
}

double total_variation(const SequenceDistribution& a, const SequenceDistribution& b) {
  double sum = 0.0;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    sum += std::abs(v - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : b) {
    if (!a.count(k)) sum += std::abs(v);
  }
  return 0.5 * sum;
}

}  // namespace sdlab
