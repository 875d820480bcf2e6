#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdlab/model.hpp"
#include "sdlab/sampling.hpp"

namespace sdlab {

// One draft-model evaluation. `handle` names the draft row so later steps
// can use it as parent or ancestor.
struct DraftOutput {
  std::vector<double> logits;
  std::size_t handle = 0;
};

// Evaluate node `token` as a child of `parent`. The new row attends to every
// committed row, to the speculative rows in `ancestors`, and to itself.
struct DraftRequest {
  std::size_t parent = 0;
  Token token = 0;
  std::vector<std::size_t> ancestors;
};

// Per-decoding-session drafter state (private caches).
//
// Protocol: the target has processed committed tokens t_0..t_{n-1} and t_n
// is pending. `sync` receives all committed tokens plus the target taps for
// the positions processed since the previous sync, drops speculative rows,
// and returns the output whose distribution proposes t_{n+1}.
class DraftSession {
 public:
  virtual ~DraftSession() = default;
  virtual DraftOutput sync(std::span<const Token> committed, const LayerTaps& new_taps) = 0;
  virtual std::vector<DraftOutput> expand(std::span<const DraftRequest> requests) = 0;
  virtual void discard_speculation() = 0;
};

class Drafter {
 public:
  virtual ~Drafter() = default;
  virtual std::string id() const = 0;
  virtual std::unique_ptr<DraftSession> start(std::uint64_t seed = 0) const = 0;
  // Flops of one speculative draft step at `context`.
  virtual double step_flops(std::size_t context) const = 0;
};

// Mask for a batch of expansion rows over a draft cache holding `past` rows,
// the first `committed` of which are committed context.
AttentionMask speculative_mask(std::size_t committed, std::size_t past,
                               std::span<const DraftRequest> requests);

// Runs a standalone transformer over tokens; used for the vanilla drafter
// and (with the target itself) for the identity drafter.
class TransformerDrafter : public Drafter {
 public:
  TransformerDrafter(std::shared_ptr<const TargetModel> model, std::string id);

  std::string id() const override { return id_; }
  std::unique_ptr<DraftSession> start(std::uint64_t seed = 0) const override;
  double step_flops(std::size_t context) const override;
  const TargetModel& model() const { return *model_; }

 private:
  std::shared_ptr<const TargetModel> model_;
  std::string id_;
};

// Wraps a drafter and rewrites the logits it proposes from.
class LogitRewriteDrafter : public Drafter {
 public:
  enum class Mode {
    // Moves the argmax token below every other token.
    kAdversarial,
    // Replaces logits with fresh i.i.d. noise so even greedy drafting picks
    // a uniformly random token.
    kUniformRandom,
  };

  LogitRewriteDrafter(std::shared_ptr<const Drafter> inner, Mode mode);

  std::string id() const override;
  std::unique_ptr<DraftSession> start(std::uint64_t seed = 0) const override;
  double step_flops(std::size_t context) const override { return inner_->step_flops(context); }

 private:
  std::shared_ptr<const Drafter> inner_;
  Mode mode_;
};

// Draft tokens proposed along a single chain.
struct DraftChain {
  std::vector<Token> tokens;
  std::vector<Dist> dists;  // distribution each token was drawn from
  std::vector<std::size_t> handles;  // draft row whose output proposed each token
};

// Chain drafting from the root output of `sync`: temperature 0 is greedy,
// otherwise tokens are sampled from softmax(logits / T).
DraftChain draft_chain(DraftSession& session, const DraftOutput& root, std::size_t depth,
                       double temperature, Rng* rng);

}  // namespace sdlab
