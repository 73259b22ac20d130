#ifndef DIALQA_OPTIM_HPP
#define DIALQA_OPTIM_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dialqa/tensor.hpp"

namespace dialqa {

struct AdamState {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  // One moment array per parameter, in parameter order. Empty until the
  // first update sizes them.
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Adam with bias correction and decoupled weight decay
// (w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)).
void adam_step(std::span<Tensor> params,
               std::span<const std::vector<double>> grads, AdamState& state,
               double lr);
// Same update, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

struct LRSchedule {
  double base_lr = 5e-5;
  std::uint64_t total_steps = 1;
  double warmup_fraction = 0.1;

  double warmup_steps() const {
    return warmup_fraction * static_cast<double>(total_steps);
  }
};

// Linear ramp from 0 to base_lr over the warmup steps, then linear decay to
// 0 at total_steps.
double lr_at_step(const LRSchedule& schedule, std::uint64_t step);

}  // namespace dialqa

#endif  // DIALQA_OPTIM_HPP
