#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdlab/corpus.hpp"
#include "sdlab/model.hpp"
#include "sdlab/optim.hpp"

namespace sdlab {

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch = 8;
  std::size_t warmup = 20;
  std::uint64_t seed = 0;
  AdamWOptions adam{.lr = 3e-3, .beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 0.0,
                    .clip = 0.5};

  std::map<std::string, std::string> to_kv(const std::string& prefix) const;
};

struct TrainLog {
  std::vector<double> step_loss;  // mean batch loss per step
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Deterministic minibatch order: shuffled epochs over `count` items.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t count, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  std::size_t count_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Next-token training on `train` (hard labels). Throws on an empty corpus or
// out-of-vocabulary tokens.
TargetModel train_target(std::span<const Sequence> train, const ModelConfig& config,
                         const TrainOptions& options, TrainLog* log = nullptr);

}  // namespace sdlab
