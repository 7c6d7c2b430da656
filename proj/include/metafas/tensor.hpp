#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "metafas/errors.hpp"

namespace metafas {

using Shape = std::vector<int>;

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Backward rule: given the node's inputs (rebuilt by the engine from the
/// recorded parents) and the gradient flowing into the node, produce one
/// gradient per input (undefined entries for inputs that need none). Rules
/// are expressed through the public tensor operations so that gradients are
/// themselves differentiable. Rules must not capture tensors that own trace
/// nodes; that would reintroduce recursive teardown of long traces.
using BackwardFn = std::function<std::vector<Tensor>(
    const std::vector<Tensor>& inputs, const Tensor& out_grad)>;

/// One recorded value in a computation trace. Leaves have no parents and no
/// backward rule.
struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;

  ~Node();
};

/// Wrap an owned node back into a handle (engine use only).
Tensor tensor_from_node(NodePtr node);

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

}  // namespace detail

/// Toggles recording of operations onto the computation trace for the
/// current thread. While a guard is alive, operations produce plain values
/// with no parents, so no graph is built and no gradients can flow.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_mode_enabled();

/// Dense row-major n-dimensional array of doubles, participating in a
/// differentiable computation trace. Tensors are immutable value handles:
/// every operation produces a fresh node and never mutates its inputs.
/// A scalar is a rank-0 tensor (empty shape, one element).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from_values(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t size() const;
  const std::vector<double>& values() const;

  /// Value of a rank-0 (or single-element) tensor.
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;

  /// Marks a leaf tensor as a differentiation target. Calling this on a
  /// non-leaf node is an error: interior trace nodes derive their flag from
  /// their parents.
  Tensor& set_requires_grad(bool value);

  /// Value copy detached from the trace (constant leaf, requires_grad off).
  Tensor detach() const;

  const char* op_name() const;

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  detail::NodePtr node_;

  friend Tensor make_op_result(Shape shape, std::vector<double> values,
                               const char* op, std::vector<Tensor> inputs,
                               detail::BackwardFn backward);
  friend Tensor detail::tensor_from_node(detail::NodePtr node);
};

/// Normal(0, stddev) samples; draw order is row-major and fixed, so a given
/// engine state always yields the same tensor.
Tensor randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0);

/// Uniform [lo, hi) samples, same determinism contract as randn.
Tensor rand_uniform(const Shape& shape, std::mt19937_64& rng, double lo = 0.0,
                    double hi = 1.0);

}  // namespace metafas
