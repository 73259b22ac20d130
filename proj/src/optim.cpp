#include "dialqa/optim.hpp"

#include <cmath>

#include "dialqa/errors.hpp"

namespace dialqa {

void adam_step(std::span<Tensor> params,
               std::span<const std::vector<double>> grads, AdamState& state,
               double lr) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters but " + std::to_string(grads.size()) +
                         " gradients");
  }
  if (lr < 0.0) throw ConfigError("adam_step: negative learning rate");
  if (state.first_moment.empty() && state.second_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() ||
        state.first_moment[i].size() != params[i].size() ||
        state.second_moment[i].size() != params[i].size()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " of shape " +
                           shape_string(params[i].shape()) +
                           " does not match its gradient or moments");
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      w[k] -= lr * (m_hat / (std::sqrt(v_hat) + state.epsilon) +
                    state.weight_decay * w[k]);
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad_vector());
  adam_step(params, grads, state, lr);
}

double lr_at_step(const LRSchedule& schedule, std::uint64_t step) {
  if (schedule.total_steps == 0) throw ConfigError("schedule needs total_steps > 0");
  if (!(schedule.warmup_fraction > 0.0 && schedule.warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in (0, 1)");
  }
  if (step > schedule.total_steps) {
    throw RangeError("step " + std::to_string(step) + " beyond schedule of " +
                     std::to_string(schedule.total_steps) + " steps");
  }
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(schedule.total_steps);
  const double warmup = schedule.warmup_steps();
  if (s <= warmup) return schedule.base_lr * s / warmup;
  return schedule.base_lr * (total - s) / (total - warmup);
}

}  // namespace dialqa
