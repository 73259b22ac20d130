#ifndef DIALQA_GRAD_CHECK_HPP
#define DIALQA_GRAD_CHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dialqa/tensor.hpp"

namespace dialqa {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double h = 1e-4;
  double tolerance = 1e-4;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  // Denominator floor of the relative error, so coordinates whose true
  // gradient is ~0 are judged by absolute error instead.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = false;
};

// Compares reverse-mode gradients against central differences
// (f(w+h) - f(w-h)) / 2h. `loss_fn` must rebuild the graph on each call
// and be deterministic.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace dialqa

#endif  // DIALQA_GRAD_CHECK_HPP
