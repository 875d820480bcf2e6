#pragma once

#include <cstddef>
#include <vector>

#include "sdlab/autodiff.hpp"

namespace sdlab {

struct AdamWOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Global gradient-norm clip; <= 0 disables.
  double clip = 0.5;
};

class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWOptions options);

  // Applies one update with learning rate `lr` (overrides options.lr when
  // > 0), then zeroes gradients. Returns the pre-clip global grad norm.
  double step(double lr = -1.0);

  std::size_t steps() const { return t_; }
  const AdamWOptions& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  AdamWOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

double global_grad_norm(const std::vector<Parameter*>& params);

// Linear warmup over `warmup` steps, then cosine decay to 10% of peak.
double scheduled_lr(double peak, std::size_t step, std::size_t total, std::size_t warmup);

}  // namespace sdlab
