#include "sdlab/drafter.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace sdlab {

AttentionMask speculative_mask(std::size_t committed, std::size_t past,
                               std::span<const DraftRequest> requests) {
  const std::size_t n = requests.size();
  AttentionMask mask(n, past + n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < committed; ++j) mask.set(r, j);
    for (std::size_t a : requests[r].ancestors) {
      if (a < committed || a >= past) {
        throw std::invalid_argument("draft expand: ancestor is not a speculative row");
      }
      mask.set(r, a);
    }
    mask.set(r, past + r);
  }
  return mask;
}

namespace {

class TransformerSession : public DraftSession {
 public:
  explicit TransformerSession(const TargetModel& model) : model_(model), cache_(model.make_cache()) {}

  DraftOutput sync(std::span<const Token> committed, const LayerTaps&) override {
    discard_speculation();
    if (committed.size() < committed_) throw std::invalid_argument("draft sync: history shrank");
    if (committed.size() > committed_) {
      const auto fresh = committed.subspan(committed_);
      const auto out = model_.forward(fresh, cache_);
      committed_ = committed.size();
      pos_.resize(committed_);
      for (std::size_t i = 0; i < committed_; ++i) pos_[i] = i;
      const auto row = out.logits.row_span(out.logits.rows() - 1);
      root_.logits.assign(row.begin(), row.end());
      root_.handle = committed_ - 1;
    }
    if (committed_ == 0) throw std::invalid_argument("draft sync: no committed tokens");
    return root_;
  }

  std::vector<DraftOutput> expand(std::span<const DraftRequest> requests) override {
    if (requests.empty()) return {};
    const std::size_t past = cache_.length();
    const AttentionMask mask = speculative_mask(committed_, past, requests);
    std::vector<Token> tokens;
    std::vector<std::size_t> positions;
    for (const DraftRequest& r : requests) {
      if (r.parent >= past) throw std::invalid_argument("draft expand: unknown parent");
      tokens.push_back(r.token);
      positions.push_back(pos_[r.parent] + 1);
    }
    const auto out = model_.forward(tokens, cache_, &mask, positions);
    std::vector<DraftOutput> result;
    for (std::size_t r = 0; r < requests.size(); ++r) {
      const auto row = out.logits.row_span(r);
      result.push_back({std::vector<double>(row.begin(), row.end()), past + r});
      pos_.push_back(positions[r]);
    }
    return result;
  }

  void discard_speculation() override {
    cache_.truncate(committed_);
    pos_.resize(committed_);
  }

 private:
  const TargetModel& model_;
  KvCache cache_;
  std::size_t committed_ = 0;
  std::vector<std::size_t> pos_;
  DraftOutput root_;
};

class RewriteSession : public DraftSession {
 public:
  RewriteSession(std::unique_ptr<DraftSession> inner, LogitRewriteDrafter::Mode mode,
                 std::uint64_t seed)
      : inner_(std::move(inner)), mode_(mode), rng_(seed) {}

  DraftOutput sync(std::span<const Token> committed, const LayerTaps& taps) override {
    DraftOutput out = inner_->sync(committed, taps);
    rewrite(out.logits);
    return out;
  }

  std::vector<DraftOutput> expand(std::span<const DraftRequest> requests) override {
    auto outs = inner_->expand(requests);
    for (DraftOutput& o : outs) rewrite(o.logits);
    return outs;
  }

  void discard_speculation() override { inner_->discard_speculation(); }

 private:
  void rewrite(std::vector<double>& logits) {
    if (mode_ == LogitRewriteDrafter::Mode::kUniformRandom) {
      for (double& v : logits) v = rng_.normal();
      return;
    }
    const Token top = greedy(logits);
    const double low = *std::min_element(logits.begin(), logits.end());
    logits[top] = low - 1.0;
  }

  std::unique_ptr<DraftSession> inner_;
  LogitRewriteDrafter::Mode mode_;
  Rng rng_;
};

}  // namespace

TransformerDrafter::TransformerDrafter(std::shared_ptr<const TargetModel> model, std::string id)
    : model_(std::move(model)), id_(std::move(id)) {
  if (!model_) throw std::invalid_argument("transformer drafter: null model");
}

std::unique_ptr<DraftSession> TransformerDrafter::start(std::uint64_t) const {
  return std::make_unique<TransformerSession>(*model_);
}

double TransformerDrafter::step_flops(std::size_t context) const {
  return model_->flops_per_token(context);
}

LogitRewriteDrafter::LogitRewriteDrafter(std::shared_ptr<const Drafter> inner, Mode mode)
    : inner_(std::move(inner)), mode_(mode) {
  if (!inner_) throw std::invalid_argument("rewrite drafter: null inner drafter");
}

std::string LogitRewriteDrafter::id() const {
  return (mode_ == Mode::kAdversarial ? "adversarial-" : "random-") + inner_->id();
}

std::unique_ptr<DraftSession> LogitRewriteDrafter::start(std::uint64_t seed) const {
  return std::make_unique<RewriteSession>(inner_->start(seed), mode_, derive_seed(seed, 0x7277));
}

DraftChain draft_chain(DraftSession& session, const DraftOutput& root, std::size_t depth,
                       double temperature, Rng* rng) {
  if (depth == 0) throw std::invalid_argument("draft_chain: depth must be >= 1");
  if (temperature < 0.0) throw std::invalid_argument("draft_chain: negative temperature");
  if (temperature > 0.0 && !rng) throw std::invalid_argument("draft_chain: rng required when T > 0");
  DraftChain chain;
  DraftOutput cur = root;
  std::vector<std::size_t> ancestors;
  for (std::size_t i = 0; i < depth; ++i) {
    chain.handles.push_back(cur.handle);
    if (temperature == 0.0) {
      chain.tokens.push_back(greedy(cur.logits));
      chain.dists.push_back(Dist::from_logits(cur.logits, 1.0));
    } else {
      chain.dists.push_back(Dist::from_logits(cur.logits, temperature));
      chain.tokens.push_back(sample(chain.dists.back(), *rng));
    }
    if (i + 1 == depth) break;
    const DraftRequest req{cur.handle, chain.tokens.back(), ancestors};
    cur = session.expand(std::span<const DraftRequest>(&req, 1)).front();
    ancestors.push_back(cur.handle);
  }
  return chain;
}

}  // namespace sdlab
