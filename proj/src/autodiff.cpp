#include "metafas/autodiff.hpp"

#include <cmath>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "metafas/ops.hpp"

namespace metafas {

namespace {

// Post-order over the requires_grad subgraph reachable from the root.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         const GradOptions& options) {
  if (!loss.defined()) throw ValueError("grad: undefined loss tensor");
  if (!loss.shape().empty()) {
    throw AutodiffError("grad: loss must be a scalar, got shape " +
                        detail::shape_str(loss.shape()));
  }
  for (const auto& w : wrt) {
    if (!w.defined()) throw ValueError("grad: undefined target tensor");
  }

  auto unreachable = [&](const Tensor& w) -> Tensor {
    if (options.zero_for_unreachable) return Tensor::zeros(w.shape());
    throw AutodiffError(
        "grad: target of shape " + detail::shape_str(w.shape()) +
        " is not reachable from the loss (detached graph?)");
  };

  if (!loss.requires_grad()) {
    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) out.push_back(unreachable(w));
    return out;
  }

  std::vector<detail::Node*> order = topo_order(loss.node());

  std::unordered_set<detail::Node*> keep;
  keep.insert(loss.node());
  for (const auto& w : wrt) keep.insert(w.node());

  std::unordered_map<detail::Node*, Tensor> grads;
  grads.reserve(order.size());
  grads.emplace(loss.node(), Tensor::scalar(1.0));

  {
    // With create_graph the backward arithmetic is recorded like any other
    // computation; otherwise it runs untraced and yields plain constants.
    std::unique_ptr<NoGradGuard> guard;
    if (!options.create_graph) guard = std::make_unique<NoGradGuard>();

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      if (!node->backward) continue;  // leaf
      Tensor node_grad;
      {
        auto git = grads.find(node);
        if (git == grads.end()) continue;
        node_grad = git->second;
      }

      std::vector<Tensor> inputs;
      inputs.reserve(node->parents.size());
      for (const auto& p : node->parents) inputs.push_back(detail::tensor_from_node(p));

      std::vector<Tensor> parent_grads = node->backward(inputs, node_grad);
      if (parent_grads.size() != node->parents.size()) {
        throw AutodiffError(std::string("grad: backward rule of '") + node->op +
                            "' returned " + std::to_string(parent_grads.size()) +
                            " gradients for " + std::to_string(node->parents.size()) +
                            " inputs");
      }
      for (size_t i = 0; i < node->parents.size(); ++i) {
        detail::Node* parent = node->parents[i].get();
        if (!parent || !parent->requires_grad || !parent_grads[i].defined()) continue;
        if (parent_grads[i].shape() != parent->shape) {
          throw AutodiffError(std::string("grad: backward rule of '") + node->op +
                              "' produced gradient shape " +
                              detail::shape_str(parent_grads[i].shape()) +
                              " for input of shape " + detail::shape_str(parent->shape));
        }
        auto slot = grads.find(parent);
        if (slot == grads.end()) {
          grads.emplace(parent, std::move(parent_grads[i]));
        } else {
          slot->second = add(slot->second, parent_grads[i]);
        }
      }
      // Drop gradients of interior nodes once consumed so peak memory tracks
      // the frontier, not the whole trace. Requested targets stay.
      if (!keep.count(node)) grads.erase(node);
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    if (it == grads.end()) {
      out.push_back(unreachable(w));
    } else {
      out.push_back(it->second);
    }
  }
  return out;
}

std::vector<Tensor> finite_difference_gradient(
    const std::function<double(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& wrt, double epsilon) {
  if (epsilon <= 0.0) throw ValueError("finite_difference_gradient: epsilon must be > 0");

  std::vector<std::vector<double>> work;
  work.reserve(wrt.size());
  for (const auto& w : wrt) work.push_back(w.values());

  auto evaluate = [&]() {
    std::vector<Tensor> args;
    args.reserve(wrt.size());
    for (size_t t = 0; t < wrt.size(); ++t) {
      Tensor a = Tensor::from_values(wrt[t].shape(), work[t]);
      a.set_requires_grad(wrt[t].requires_grad());
      args.push_back(std::move(a));
    }
    const double v = fn(args);
    if (!std::isfinite(v)) {
      throw ValueError("finite_difference_gradient: non-finite function value");
    }
    return v;
  };

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (size_t t = 0; t < wrt.size(); ++t) {
    std::vector<double> g(work[t].size());
    for (size_t i = 0; i < work[t].size(); ++i) {
      const double saved = work[t][i];
      work[t][i] = saved + epsilon;
      const double plus = evaluate();
      work[t][i] = saved - epsilon;
      const double minus = evaluate();
      work[t][i] = saved;
      g[i] = (plus - minus) / (2.0 * epsilon);
    }
    out.push_back(Tensor::from_values(wrt[t].shape(), std::move(g)));
  }
  return out;
}

}  // namespace metafas
