#include "metafas/tensor.hpp"

#include <sstream>
#include <utility>

namespace metafas {

namespace detail {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// Iterative teardown: traces can be thousands of nodes deep, and the default
// recursive shared_ptr chain destruction would exhaust the stack. Backward
// closures hold no trace nodes (see BackwardFn), so clearing parents is
// enough to break every ownership chain.
Node::~Node() {
  std::vector<NodePtr> pending;
  pending.reserve(parents.size());
  for (auto& p : parents) {
    if (p) pending.push_back(std::move(p));
  }
  parents.clear();
  while (!pending.empty()) {
    NodePtr n = std::move(pending.back());
    pending.pop_back();
    if (n.use_count() == 1) {
      for (auto& p : n->parents) {
        if (p) pending.push_back(std::move(p));
      }
      n->parents.clear();
      n->backward = nullptr;
    }
  }
}

Tensor tensor_from_node(NodePtr node) { return Tensor(std::move(node)); }

bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::grad_mode_flag()) {
  detail::grad_mode_flag() = false;
}

NoGradGuard::~NoGradGuard() { detail::grad_mode_flag() = prev_; }

bool grad_mode_enabled() { return detail::grad_mode_flag(); }

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("full: non-positive dimension in " + detail::shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->values.assign(static_cast<size_t>(detail::numel(shape)), value);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  const int64_t n = detail::numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + detail::shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ValueError("shape: undefined tensor");
  return node_->shape;
}

int64_t Tensor::size() const {
  if (!node_) throw ValueError("size: undefined tensor");
  return static_cast<int64_t>(node_->values.size());
}

const std::vector<double>& Tensor::values() const {
  if (!node_) throw ValueError("values: undefined tensor");
  return node_->values;
}

double Tensor::item() const {
  if (!node_) throw ValueError("item: undefined tensor");
  if (node_->values.size() != 1) {
    throw ShapeError("item: tensor of shape " + detail::shape_str(node_->shape) +
                     " is not a scalar");
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_) throw ValueError("set_requires_grad: undefined tensor");
  if (node_->backward) {
    throw AutodiffError("set_requires_grad: only leaf tensors can be marked; '" +
                        std::string(node_->op) + "' output is not a leaf");
  }
  node_->requires_grad = value;
  return *this;
}

Tensor Tensor::detach() const {
  if (!node_) throw ValueError("detach: undefined tensor");
  return from_values(node_->shape, node_->values);
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor make_op_result(Shape shape, std::vector<double> values, const char* op,
                      std::vector<Tensor> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;

  bool record = grad_mode_enabled();
  if (record) {
    bool any_grad = false;
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        any_grad = true;
        break;
      }
    }
    record = any_grad;
  }
  if (record) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node_ ? in.node_ : nullptr);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor randn(const Shape& shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<size_t>(detail::numel(shape)));
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(shape, std::move(v));
}

Tensor rand_uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<size_t>(detail::numel(shape)));
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(shape, std::move(v));
}

}  // namespace metafas
