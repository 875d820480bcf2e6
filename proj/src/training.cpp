#include "sdlab/training.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sdlab {

std::map<std::string, std::string> TrainOptions::to_kv(const std::string& prefix) const {
  auto d = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{prefix + "steps", std::to_string(steps)},
          {prefix + "batch", std::to_string(batch)},
          {prefix + "warmup", std::to_string(warmup)},
          {prefix + "seed", std::to_string(seed)},
          {prefix + "lr", d(adam.lr)},
          {prefix + "beta1", d(adam.beta1)},
          {prefix + "beta2", d(adam.beta2)},
          {prefix + "weight_decay", d(adam.weight_decay)},
          {prefix + "clip", d(adam.clip)}};
}

BatchSchedule::BatchSchedule(std::size_t count, std::uint64_t seed)
    : count_(count), rng_(seed), order_(count) {
  if (count == 0) throw std::invalid_argument("batch schedule: no items");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  cursor_ = count_;
}

std::vector<std::size_t> BatchSchedule::next(std::size_t batch) {
  std::vector<std::size_t> out;
  while (out.size() < batch) {
    if (cursor_ == count_) {
      for (std::size_t i = count_; i > 1; --i) {
        std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng_.below(i))]);
      }
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

TargetModel train_target(std::span<const Sequence> train, const ModelConfig& config,
                         const TrainOptions& options, TrainLog* log) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].size() >= 2) usable.push_back(i);
    for (Token t : train[i]) {
      if (t >= config.vocab_size) throw std::out_of_range("train_target: token out of vocabulary");
    }
  }
  if (usable.empty()) throw std::invalid_argument("train_target: empty corpus");

  TargetModel model(config, derive_seed(options.seed, 1));
  AdamW opt(model.params().trainable(), options.adam);
  BatchSchedule schedule(usable.size(), derive_seed(options.seed, 2));
  const std::size_t batch = std::max<std::size_t>(1, options.batch);
  const std::size_t max_len = config.max_seq_len + 1;

  auto seq_loss = [&](const Sequence& s, bool backprop) {
    const std::size_t n = std::min(s.size(), max_len);
    Graph g(backprop);
    const auto out = model.build(g, std::span<const Token>(s.data(), n - 1));
    Tensor target(n - 1, config.vocab_size);
    for (std::size_t i = 0; i + 1 < n; ++i) target.at(i, s[i + 1]) = 1.0;
    const Value loss = ad::cross_entropy(g, out.logits, target);
    if (backprop) g.backward(ad::scale(g, loss, 1.0 / static_cast<double>(batch)));
    return g.value(loss).data[0];
  };

  TrainLog local;
  for (std::size_t step = 0; step < options.steps; ++step) {
    double total = 0.0;
    for (std::size_t idx : schedule.next(batch)) total += seq_loss(train[usable[idx]], true);
    opt.step(scheduled_lr(options.adam.lr, step, options.steps, options.warmup));
    local.step_loss.push_back(total / static_cast<double>(batch));
  }
  if (log) {
    if (!local.step_loss.empty()) {
      local.initial_loss = local.step_loss.front();
      local.final_loss = local.step_loss.back();
    }
    *log = std::move(local);
  }
  return model;
}

}  // namespace sdlab
