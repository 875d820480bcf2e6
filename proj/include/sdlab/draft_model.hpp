#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdlab/autodiff.hpp"
#include "sdlab/corpus.hpp"
#include "sdlab/drafter.hpp"
#include "sdlab/model.hpp"
#include "sdlab/training.hpp"

namespace sdlab {

// Feature-level drafters built on a frozen target. Both kinds run one
// decoder block over W_in [x; e(token)] and read tokens through the
// target's LM head; they differ in the per-position input x and the loss.
//
//   kFused     x = W_fuse [l; m; h] + b, trained by multi-round token loss
//   kTopLayer  x = W_fuse f + b, same training (isolates the fusion input)
//   kFeature   x = f, trained to regress the next f plus a token term
enum class DraftKind { kFused, kTopLayer, kFeature };

std::string to_string(DraftKind kind);
DraftKind draft_kind_from_string(const std::string& s);

struct DraftConfig {
  DraftKind kind = DraftKind::kFused;
  // Training rounds: round 0 consumes target features, round r > 0 consumes
  // the round r-1 decoder output. 1 disables the simulated rounds.
  std::size_t rounds = 3;
  // Soft targets use the full target distribution; hard ones the data token.
  bool soft_targets = true;
  // kFeature loss: smooth_l1(f_hat, f) + w_token * token cross-entropy.
  double w_token = 0.1;
  double smooth_l1_beta = 1.0;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static DraftConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Query (r, i) of a rounds x prefix_len grid attends to keys (0, j <= i)
// and (r', i) for 1 <= r' <= r. Rows and columns are round-major.
AttentionMask build_ttt_mask(std::size_t prefix_len, std::size_t rounds);

class FeatureDraftModel {
 public:
  FeatureDraftModel(std::shared_ptr<const TargetModel> target, DraftConfig config,
                    std::uint64_t seed);
  FeatureDraftModel(const FeatureDraftModel&) = delete;
  FeatureDraftModel& operator=(const FeatureDraftModel&) = delete;

  const TargetModel& target() const { return *target_; }
  std::shared_ptr<const TargetModel> target_ptr() const { return target_; }
  const DraftConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  // Shared with the target (same object).
  const Parameter& lm_head() const { return target_->lm_head(); }
  const Parameter& token_embedding() const { return target_->token_embedding(); }

  KvCache make_cache() const;

  // Per-position draft inputs from target taps (rows x k).
  Tensor fuse(const LayerTaps& taps) const;
  Value fuse(Graph& g, const LayerTaps& taps, std::size_t begin, std::size_t count,
             bool trainable) const;

  struct StepOutput {
    Tensor states;  // decoder outputs a (or predicted features)
    Tensor logits;
  };
  // Rows of (input feature, token) at explicit positions over `cache`.
  StepOutput step(const Tensor& features, std::span<const Token> tokens,
                  std::span<const std::size_t> positions, KvCache& cache,
                  const AttentionMask* mask = nullptr) const;

  struct Rows {
    Value states, logits, keys, values;
  };
  Rows build_rows(Graph& g, Value features, std::span<const Token> tokens,
                  std::span<const std::size_t> positions, Value past_keys, Value past_values,
                  const AttentionMask& mask, bool trainable) const;

  double step_flops(std::size_t context) const;

 private:
  std::shared_ptr<const TargetModel> target_;
  DraftConfig config_;
  ParamStore params_;
  Parameter* fuse_w_ = nullptr;
  Parameter* fuse_b_ = nullptr;
  Parameter* in_w_ = nullptr;
  Parameter* in_b_ = nullptr;
  BlockParams block_;
  Parameter* out_norm_ = nullptr;
};

class FeatureDrafter : public Drafter {
 public:
  explicit FeatureDrafter(std::shared_ptr<const FeatureDraftModel> model, std::string id = "");

  std::string id() const override { return id_; }
  std::unique_ptr<DraftSession> start(std::uint64_t seed = 0) const override;
  double step_flops(std::size_t context) const override { return model_->step_flops(context); }
  const FeatureDraftModel& model() const { return *model_; }

 private:
  std::shared_ptr<const FeatureDraftModel> model_;
  std::string id_;
};

// Session of a FeatureDrafter; exposes the per-row state and the inputs of
// the last expansion for instrumentation.
class FeatureDraftSession : public DraftSession {
 public:
  explicit FeatureDraftSession(const FeatureDraftModel& model);

  DraftOutput sync(std::span<const Token> committed, const LayerTaps& new_taps) override;
  std::vector<DraftOutput> expand(std::span<const DraftRequest> requests) override;
  void discard_speculation() override;

  std::span<const double> state(std::size_t handle) const;
  const Tensor& last_inputs() const { return last_inputs_; }

 private:
  const FeatureDraftModel& model_;
  KvCache cache_;
  std::size_t committed_ = 0;  // draft rows backed by target taps
  std::vector<std::vector<double>> states_;
  std::vector<std::size_t> pos_;
  DraftOutput root_;
  Tensor last_inputs_;
};

// Target-labelled training sequence: taps and next-token distributions of
// the frozen target at every position.
struct DistillExample {
  Sequence tokens;
  LayerTaps taps;
  Tensor teacher;  // n x V, row j is the target distribution of token j+1
};

DistillExample distill_example(const TargetModel& target, const Sequence& tokens);

// Continues each prompt with `gen_len` target samples at `temperature` and
// labels the result.
std::vector<DistillExample> make_distill_set(const TargetModel& target,
                                             std::span<const Sequence> prompts,
                                             std::size_t gen_len, double temperature,
                                             std::uint64_t seed);

// Training loss of one example; builds into `g` (trainable draft params).
Value draft_loss(Graph& g, FeatureDraftModel& model, const DistillExample& ex);

// Trains a new drafter of `config` on `data`.
std::unique_ptr<FeatureDraftModel> train_feature_draft(std::shared_ptr<const TargetModel> target,
                                                       const DraftConfig& config,
                                                       std::span<const DistillExample> data,
                                                       const TrainOptions& options,
                                                       TrainLog* log = nullptr);

}  // namespace sdlab
