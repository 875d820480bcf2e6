#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdlab/corpus.hpp"
#include "sdlab/decoding.hpp"
#include "sdlab/drafter.hpp"
#include "sdlab/model.hpp"

namespace sdlab {

struct LosslessOptions {
  std::size_t pairs = 20;
  std::size_t vocab = 4;
  std::size_t max_depth = 3;  // pair i drafts 1 + i % max_depth tokens per cycle
  std::size_t length = 4;  // emitted tokens compared
  double temperature = 1.0;
  double logit_scale = 2.0;  // sharpens the random models' distributions
  bool trees = true;  // also enumerate tree decoding for every pair
  std::uint64_t seed = 11;
};

struct LosslessCase {
  std::size_t pair = 0;
  std::string mode;  // "chain" or "tree"
  std::size_t depth = 0;
  double tv = 0.0;
};

struct LosslessReport {
  std::vector<LosslessCase> cases;
  double max_tv = 0.0;
};

// Random tiny transformer with the output head scaled by `logit_scale`.
std::shared_ptr<TargetModel> random_toy_model(std::size_t vocab, double logit_scale,
                                              std::uint64_t seed);

// Exact output distribution of speculative decoding against the target's
// autoregressive distribution for random (target, drafter) pairs.
LosslessReport check_lossless(const LosslessOptions& options);

struct GreedyMismatch {
  std::string drafter;
  std::string mode;
  std::size_t prompt = 0;
  std::size_t position = 0;  // first differing generated token
};

struct GreedyReport {
  std::size_t runs = 0;
  std::vector<GreedyMismatch> mismatches;
};

// T = 0 speculative decoding (chain and tree) against plain greedy
// generation for every drafter and prompt.
GreedyReport check_greedy(const TargetModel& target,
                          std::span<const std::shared_ptr<const Drafter>> drafters,
                          std::span<const Sequence> prompts, const DecodeConfig& decode);

struct GradientCheck {
  std::string worst;  // parameter with the largest error
  double max_rel_error = 0.0;
  std::size_t params = 0;
  std::size_t elements = 0;
};

// Central finite differences for every element of every trainable
// parameter in `params` against Graph::backward of `loss`. The error of a
// parameter is ||analytic - numeric|| / (||analytic|| + ||numeric||).
GradientCheck gradient_check(ParamStore& params, const std::function<Value(Graph&)>& loss,
                             double step = 1e-5);

}  // namespace sdlab
