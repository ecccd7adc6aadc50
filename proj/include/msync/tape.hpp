#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "msync/params.hpp"
#include "msync/tensor.hpp"

namespace msync {

// Handle to a node on a Tape.
struct Var {
  Index i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order, so visiting
// them in reverse index order is a reverse topological walk. Gradients
// accumulate additively over fan-out; nodes that never receive a gradient
// are skipped entirely during backward.
template <typename S>
class Tape {
 public:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool grad_live = false;   // grad allocated and seeded this backward pass
    bool needs_grad = false;  // on a path from a watched parameter
    std::function<void()> backprop;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var push(Tensor<S> value, bool needs_grad, std::function<void()> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{Index(nodes_.size()) - 1};
  }

  // Leaf with no gradient path (inputs, masks, positional encodings).
  Var constant(Tensor<S> value) { return push(std::move(value), false, nullptr); }

  // Leaf for a trainable parameter; cached so watching twice yields the
  // same node and fan-out accumulates (shared-softmax contract).
  Var watch(Parameter<S>& p) {
    auto it = watched_index_.find(&p);
    if (it != watched_index_.end()) return it->second;
    Var v = push(p.value, true, nullptr);
    watched_index_[&p] = v;
    watched_.emplace_back(&p, v);
    return v;
  }

  const Tensor<S>& val(Var v) const { return nodes_[size_t(v.i)].value; }
  Tensor<S>& val(Var v) { return nodes_[size_t(v.i)].value; }
  bool needs_grad(Var v) const { return nodes_[size_t(v.i)].needs_grad; }

  // Gradient accumulator for a node, allocated on first touch.
  Tensor<S>& grad(Var v) {
    Node& n = nodes_[size_t(v.i)];
    if (!n.grad_live) {
      n.grad = Tensor<S>(n.value.shape());
      n.grad_live = true;
    }
    return n.grad;
  }

  bool grad_live(Var v) const { return nodes_[size_t(v.i)].grad_live; }

  // Reverse sweep from `loss` (must be scalar). Returns nothing; read
  // gradients via grad(), grad_map(), or accumulate_param_grads().
  void backward(Var loss) {
    if (val(loss).size() != 1)
      throw NonScalarLoss("loss has shape " +
                          Tensor<S>::shape_string(val(loss).shape()));
    grad(loss)[0] = S(1);
    for (Index i = loss.i; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.grad_live && n.backprop) n.backprop();
    }
  }

  // Spec surface: gradients of every watched parameter by name; parameters
  // not on the loss path get zeros.
  std::map<std::string, Tensor<S>> grad_map() const {
    std::map<std::string, Tensor<S>> out;
    for (const auto& [param, v] : watched_) {
      const Node& n = nodes_[size_t(v.i)];
      out[param->name] = n.grad_live ? n.grad : Tensor<S>(param->value.shape());
    }
    return out;
  }

  // Adds this tape's parameter gradients into the persistent accumulators.
  void accumulate_param_grads() {
    for (auto& [param, v] : watched_) {
      const Node& n = nodes_[size_t(v.i)];
      if (n.grad_live) param->grad.vec() += n.grad.vec();
    }
  }

  size_t node_count() const { return nodes_.size(); }

  // Index the next push will occupy; ops use it to let backprop closures
  // refer to their own output node.
  Index next_index() const { return Index(nodes_.size()); }

 private:
  std::vector<Node> nodes_;
  std::map<Parameter<S>*, Var> watched_index_;
  std::vector<std::pair<Parameter<S>*, Var>> watched_;
};

// Convenience wrapper matching the spec's backward(loss, tape) operation.
template <typename S>
std::map<std::string, Tensor<S>> backward(Var loss, Tape<S>& tape) {
  tape.backward(loss);
  return tape.grad_map();
}

}  // namespace msync
