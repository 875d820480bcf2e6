#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdlab/autodiff.hpp"
#include "sdlab/sampling.hpp"
#include "sdlab/tensor.hpp"

namespace sdlab {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_seq_len = 512;
  std::size_t mlp_mult = 4;
  // 1-based layer indices for the low/mid/high taps.
  std::array<std::size_t, 3> taps = default_taps(4);

  static std::array<std::size_t, 3> default_taps(std::size_t layers);

  // Shape invariants shared by every transformer in the lab.
  void validate() const;
  // Additionally requires 1 <= low < mid < high <= layers.
  void validate_taps() const;
  bool taps_valid() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

// Per-position feature rows (n x hidden each).
struct LayerTaps {
  Tensor low, mid, high;
  Tensor top;  // post-final-norm feature feeding the LM head

  std::size_t positions() const { return top.rows(); }
  // Rows [begin, begin + count).
  LayerTaps slice(std::size_t begin, std::size_t count) const;
  void append(const LayerTaps& other);
};

class KvCache {
 public:
  KvCache() = default;
  KvCache(std::size_t layers, std::size_t width, std::size_t capacity);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t layers() const { return keys_.size(); }

  const Tensor& keys(std::size_t layer) const { return keys_[layer]; }
  const Tensor& values(std::size_t layer) const { return values_[layer]; }

  // Appends the same number of rows to every layer.
  void append(const std::vector<Tensor>& keys, const std::vector<Tensor>& values);

  // Exact rollback to an earlier length.
  void truncate(std::size_t length);
  // Keeps `rows` (strictly increasing) in order; used to compact a verified
  // tree path into sequential positions.
  void keep_rows(std::span<const std::size_t> rows);

  bool operator==(const KvCache& other) const;

 private:
  std::vector<Tensor> keys_, values_;
  std::size_t width_ = 0;
  std::size_t length_ = 0;
  std::size_t capacity_ = 0;
};

// Parameter handles of one pre-norm transformer block.
struct BlockParams {
  Parameter* attn_norm = nullptr;
  Parameter* wq = nullptr;
  Parameter* wk = nullptr;
  Parameter* wv = nullptr;
  Parameter* wo = nullptr;
  Parameter* mlp_norm = nullptr;
  Parameter* w1 = nullptr;
  Parameter* w2 = nullptr;
};

// Registers block parameters named `prefix.*` with the usual init.
BlockParams add_block_params(ParamStore& store, const std::string& prefix, std::size_t width,
                             std::size_t mlp_mult, std::size_t depth_scale, Rng& rng);

struct BlockOutput {
  Value out;
  Value keys;    // new keys only
  Value values;  // new values only
};

// x + attn(norm(x)) followed by x + mlp(norm(x)). `past_keys` / `past_values`
// may be invalid handles when there is no context.
BlockOutput block_forward(Graph& g, const BlockParams& p, Value x, Value past_keys,
                          Value past_values, const AttentionMask& mask, int heads,
                          bool trainable);

Tensor init_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

// Tiny decoder-only transformer with learned absolute positions. Used as
// the target model and as the independent vanilla drafter.
class TargetModel {
 public:
  TargetModel(ModelConfig config, std::uint64_t seed);
  TargetModel(const TargetModel&) = delete;
  TargetModel& operator=(const TargetModel&) = delete;
  TargetModel(TargetModel&&) = default;
  TargetModel& operator=(TargetModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const Parameter& token_embedding() const { return *tok_emb_; }
  const Parameter& position_embedding() const { return *pos_emb_; }
  const Parameter& lm_head() const { return *lm_head_; }

  KvCache make_cache() const;

  struct Output {
    Tensor logits;  // n x vocab
    LayerTaps taps;
  };

  // Incremental/tree forward. Default mask is causal over cache + new
  // tokens; default positions continue from the cache length.
  Output forward(std::span<const Token> tokens, KvCache& cache,
                 const AttentionMask* mask = nullptr,
                 std::span<const std::size_t> positions = {}) const;

  // Full-sequence graph for training (no cache).
  struct GraphOutput {
    Value logits;
    Value top;
  };
  GraphOutput build(Graph& g, std::span<const Token> tokens);

  // Analytic multiply-add count (2 flops each) for one token at `context`.
  double flops_per_token(std::size_t context) const;

 private:
  ModelConfig config_;
  ParamStore params_;
  Parameter* tok_emb_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  std::vector<BlockParams> blocks_;
  Parameter* final_norm_ = nullptr;
  Parameter* lm_head_ = nullptr;
};

// Appends n tokens. Temperature 0 is greedy with lowest-id tie-break.
std::vector<Token> generate(const TargetModel& model, std::span<const Token> prompt,
                            std::size_t n, double temperature, Rng* rng);

// Mean next-token cross-entropy over every position of every sequence.
double next_token_loss(const TargetModel& model, std::span<const std::vector<Token>> seqs);
// Fraction of positions whose greedy prediction equals the next token.
double greedy_accuracy(const TargetModel& model, std::span<const std::vector<Token>> seqs);

}  // namespace sdlab
