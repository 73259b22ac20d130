#include "dialqa/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "dialqa/errors.hpp"

namespace dialqa {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& Tensor::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::from_node(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(shape_size(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw InputError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(int index) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int i = index < 0 ? r + index : index;
  if (i < 0 || i >= r) {
    throw DimensionError("dimension " + std::to_string(index) +
                         " out of range for shape " + shape_string(s));
  }
  return s[static_cast<std::size_t>(i)];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw InputError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw InputError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) requires a matrix");
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw InputError("use of undefined tensor");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad_vector() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(size(), 0.0);
}

std::span<const double> Tensor::grad() const {
  if (!node_) throw InputError("use of undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward(double seed) const {
  if (size() != 1) {
    throw DimensionError("backward() requires a scalar, got shape " +
                         shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node* node : order) {
    if (node->backward_fn) node->grad.clear();
  }
}

Tensor Tensor::clone() const {
  return from_vector(shape(), std::vector<double>(data().begin(), data().end()),
                     false);
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward_fn) {
  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace dialqa
