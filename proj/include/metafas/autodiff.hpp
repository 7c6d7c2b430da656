#pragma once

#include <functional>
#include <vector>

#include "metafas/tensor.hpp"

namespace metafas {

struct GradOptions {
  /// Record the backward computation itself onto the trace, making the
  /// returned gradients differentiable (required for meta-gradients).
  bool create_graph = false;
  /// Return a zero tensor for targets the loss does not depend on instead of
  /// raising. Off by default: an unreachable weight usually signals a
  /// detached-graph bug.
  bool zero_for_unreachable = false;
};

/// Reverse-mode gradient of a scalar loss with respect to each tensor in
/// `wrt`. Returns one gradient per target, shape-matching, in input order.
/// Backward rules are executed through the public operations, so with
/// create_graph=true the result is itself part of the trace and can be
/// differentiated again.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         const GradOptions& options = {});

/// Central-difference gradient oracle: (fn(w+eps) - fn(w-eps)) / (2 eps)
/// per coordinate. `fn` must be deterministic; non-finite outputs raise.
/// Independent of the reverse-mode engine by construction.
std::vector<Tensor> finite_difference_gradient(
    const std::function<double(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& wrt, double epsilon);

}  // namespace metafas
