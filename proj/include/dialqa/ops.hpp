#ifndef DIALQA_OPS_HPP
#define DIALQA_OPS_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "dialqa/random.hpp"
#include "dialqa/tensor.hpp"

namespace dialqa {

// Matrix product over the last two axes; leading axes broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);

// Elementwise sum. `b` must have the shape of `a` or of a suffix of it, in
// which case it is broadcast over the leading axes (bias rows, masks).
Tensor add(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Sum of equally shaped tensors.
Tensor add_n(std::span<const Tensor> terms);

// Exact erf form.
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis = -1);
// Normalizes over the last axis; gain and bias have the last axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);
// Inverted dropout: survivors scale by 1/(1-p); identity when not training.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// Rows of a matrix, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// Mean over axis 0 of a matrix, shape [1, cols].
Tensor mean_rows(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// -log softmax(logits)[target] for a vector of logits.
Tensor cross_entropy(const Tensor& logits, std::size_t target);
// Mean cross-entropy over the rows of a [n, k] logit matrix.
Tensor cross_entropy_rows(const Tensor& logits,
                          std::span<const std::size_t> targets);

// Plain (non-differentiable) helpers shared by inference code.
std::vector<double> softmax_values(std::span<const double> logits);

}  // namespace dialqa

#endif  // DIALQA_OPS_HPP
