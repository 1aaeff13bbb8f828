#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dsts/tensor.hpp"

namespace dsts {

class Var;

// Maps the gradient of a node's output to gradients of each of its inputs.
// Entries may be empty Vars for inputs that receive no gradient. Backward
// functions are written in terms of differentiable ops, so running them with
// graph recording enabled yields a graph that can itself be differentiated.
using BackwardFn = std::function<std::vector<Var>(const Var& grad_output)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

/// Handle to a node in the computation record. Cheap to copy; the record is
/// kept alive by the handles that reference it (define-by-run).
class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  /// Records an op result. When grad mode is off or no input requires a
  /// gradient, the result is a constant and `fn` is dropped.
  static Var make(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::int64_t i) const { return node_->value.dim(i); }
  std::int64_t rank() const { return node_->value.rank(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }
  Node* node() const { return node_.get(); }

  /// Same value, cut from the record.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node> node_;
};

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set(bool enabled);
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(GradMode::enabled()) { GradMode::set(enabled); }
  ~GradModeGuard() { GradMode::set(previous_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

/// Result of a reverse pass. `reached[i]` is false when inputs[i] did not
/// participate in computing the output; its gradient is then all zeros.
struct Gradients {
  std::vector<Var> grads;
  std::vector<bool> reached;

  const Var& operator[](std::size_t i) const { return grads[i]; }
  std::size_t size() const { return grads.size(); }
};

/// Gradients of a single-element `output` with respect to `inputs`. With
/// `create_graph` the returned gradients are themselves recorded and can be
/// differentiated again.
Gradients grad(const Var& output, std::span<const Var> inputs, bool create_graph = false);

/// One step of gradient descent p - lr * dloss/dp over `params`. When
/// `differentiable` is set, the updated values stay connected to everything
/// the gradient depended on.
struct InnerStep {
  std::vector<Var> updated;
  bool differentiable = false;
};
InnerStep gradient_step(const Var& loss, std::span<const Var> params, double lr, bool differentiable);

/// Gradients of `outer_loss` (computed from `inner.updated`) with respect to
/// `outer_params`, flowing through the inner gradient. Throws
/// UnsupportedError when the inner step was not recorded differentiably.
Gradients backward_through_backward(const Var& outer_loss, const InnerStep& inner,
                                    std::span<const Var> outer_params);

}  // namespace dsts
