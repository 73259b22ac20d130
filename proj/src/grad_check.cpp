#include "dialqa/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dialqa/errors.hpp"
#include "dialqa/random.hpp"

namespace dialqa {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw ConfigError("grad_check step h must be positive");

  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  const double base = loss.item();
  if (loss_fn().item() != base) {
    throw DeterminismError("loss function returned different values for identical inputs");
  }
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.tensor.grad_vector());

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor tensor = params[t].tensor;
    auto values = tensor.mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double original = values[idx];
      values[idx] = original + options.h;
      const double up = loss_fn().item();
      values[idx] = original - options.h;
      const double down = loss_fn().item();
      values[idx] = original;
      const double numeric = (up - down) / (2.0 * options.h);
      const double a = analytic[t][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_rel_error || report.worst_tensor.empty()) {
        report.max_rel_error = rel;
        report.worst_tensor = params[t].name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    tensor.zero_grad();
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace dialqa
