#include "sdlab/optim.hpp"

#include <cmath>
#include <numbers>

namespace sdlab {

AdamW::AdamW(std::vector<Parameter*> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

double global_grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params) {
    for (double gv : p->grad.data) s += gv * gv;
  }
  return std::sqrt(s);
}

double AdamW::step(double lr) {
  if (lr <= 0.0) lr = options_.lr;
  const double norm = global_grad_norm(params_);
  const double clip_scale =
      (options_.clip > 0.0 && norm > options_.clip) ? options_.clip / norm : 1.0;
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() != p.value.size()) p.zero_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = p.grad.data[j] * clip_scale;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
      p.value.data[j] -= lr * (update + options_.weight_decay * p.value.data[j]);
    }
    p.zero_grad();
  }
  return norm;
}

double scheduled_lr(double peak, std::size_t step, std::size_t total, std::size_t warmup) {
  if (warmup > 0 && step < warmup) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total <= warmup) return peak;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
  return peak * (0.1 + 0.9 * cosine);
}

}  // namespace sdlab
