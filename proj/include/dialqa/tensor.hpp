#ifndef DIALQA_TENSOR_HPP
#define DIALQA_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dialqa {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles that records the operations producing it
// when any input requires a gradient. Copies are cheap handles to the same
// storage; use clone() for a deep copy.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative indices count from the last dimension.
  std::size_t dim(int index) const;
  std::size_t size() const { return data().size(); }

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Zeros when no gradient has been accumulated yet.
  std::vector<double> grad_vector() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar; gradients accumulate into every
  // reachable tensor that requires them. `seed` scales the output gradient.
  void backward(double seed = 1.0) const;

  // Deep copy of the values, detached from any graph.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op result. The backward closure is only attached when some
// input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward_fn);

}  // namespace dialqa

#endif  // DIALQA_TENSOR_HPP
