#include "blursplat/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace blursplat {

void AdamSlot::compact(const std::vector<std::uint8_t>& drop,
                       std::size_t stride) {
  if (stride == 0 || drop.size() * stride != m.size()) {
    throw std::invalid_argument("AdamSlot::compact: flag/stride mismatch");
  }
  std::size_t w = 0;
  for (std::size_t i = 0; i < drop.size(); ++i) {
    if (drop[i]) continue;
    for (std::size_t k = 0; k < stride; ++k) {
      m[w * stride + k] = m[i * stride + k];
      v[w * stride + k] = v[i * stride + k];
    }
    ++w;
  }
  m.resize(w * stride);
  v.resize(w * stride);
}

void adam_update(double* m, double* v, double* params, const double* grads,
                 std::size_t n, double lr, int step, const AdamConfig& cfg) {
  if (step < 1) throw std::invalid_argument("adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, step);
  const double c2 = 1.0 - std::pow(cfg.beta2, step);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void adam_step(AdamSlot* slot, double* params, const double* grads,
               std::size_t n, double lr, int step, const AdamConfig& cfg) {
  if (slot == nullptr || slot->size() != n) {
    throw std::invalid_argument("adam_step: slot not sized to the parameters");
  }
  adam_update(slot->m.data(), slot->v.data(), params, grads, n, lr, step, cfg);
}

double exp_decay_lr(double lr0, double lr1, double t01) {
  if (!(lr0 > 0.0) || !(lr1 > 0.0)) {
    throw std::invalid_argument("exp_decay_lr: rates must be positive");
  }
  const double t = std::clamp(t01, 0.0, 1.0);
  return lr0 * std::exp(t * std::log(lr1 / lr0));
}

}  // namespace blursplat
