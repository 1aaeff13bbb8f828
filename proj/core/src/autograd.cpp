#include "dsts/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "dsts/error.hpp"
#include "dsts/ops.hpp"

namespace dsts {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool enabled) { g_grad_enabled = enabled; }

Var Var::constant(Tensor value) {
  Var v;
  v.node_ = std::make_shared<Node>();
  v.node_->value = std::move(value);
  return v;
}

Var Var::parameter(Tensor value) {
  Var v = constant(std::move(value));
  v.node_->requires_grad = true;
  return v;
}

Var Var::make(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op) {
  if (finite_checks_enabled() && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op ") + op);
  }
  Var v = constant(std::move(value));
  v.node_->op = op;
  if (!GradMode::enabled()) return v;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return v;
  v.node_->requires_grad = true;
  v.node_->inputs = std::move(inputs);
  v.node_->backward = std::move(fn);
  return v;
}

Gradients grad(const Var& output, std::span<const Var> inputs, bool create_graph) {
  if (!output.defined() || output.value().size() != 1) {
    throw InputError("grad() needs a single-element output");
  }
  Gradients result;
  result.grads.resize(inputs.size());
  result.reached.assign(inputs.size(), false);

  std::unordered_map<const Node*, Var> grads;
  if (output.requires_grad()) {
    // Iterative post-order DFS; reverse of it is a topological order.
    std::vector<Node*> order;
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].node();
        if (child->requires_grad && !visited.count(child)) {
          visited.insert(child);
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    GradModeGuard mode(create_graph);
    grads[output.node()] = Var::constant(Tensor(output.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (!node->backward) continue;
      auto found = grads.find(node);
      if (found == grads.end()) continue;
      std::vector<Var> in_grads = node->backward(found->second);
      for (std::size_t j = 0; j < node->inputs.size(); ++j) {
        const Var& in = node->inputs[j];
        if (!in.requires_grad() || j >= in_grads.size() || !in_grads[j].defined()) continue;
        auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[j]);
        if (!inserted) slot->second = ops::add(slot->second, in_grads[j]);
      }
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto found = grads.find(inputs[i].node());
    if (found != grads.end()) {
      result.grads[i] = found->second;
      result.reached[i] = true;
    } else {
      result.grads[i] = Var::constant(Tensor(inputs[i].shape(), 0.0));
    }
  }
  return result;
}

InnerStep gradient_step(const Var& loss, std::span<const Var> params, double lr, bool differentiable) {
  Gradients g = grad(loss, params, differentiable);
  InnerStep step;
  step.differentiable = differentiable;
  step.updated.reserve(params.size());
  GradModeGuard mode(differentiable);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (lr == 0.0 || !g.reached[i]) {
      step.updated.push_back(params[i]);
    } else {
      step.updated.push_back(ops::sub(params[i], ops::scale(g[i], lr)));
    }
  }
  return step;
}

Gradients backward_through_backward(const Var& outer_loss, const InnerStep& inner,
                                    std::span<const Var> outer_params) {
  if (!inner.differentiable) {
    throw UnsupportedError("inner step was not recorded differentiably; second-order gradients unavailable");
  }
  return grad(outer_loss, outer_params, false);
}

}  // namespace dsts
