#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "uda/tensor.hpp"

namespace uda {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class GradMode { enabled, disabled };

/// Ordered record of executed operations.
///
/// Inputs and parameters enter as leaves; every op appends one output node
/// and, when gradients are enabled, one backward closure. backward() replays
/// the closures in reverse and accumulates leaf gradients into the parameter
/// tensors that were registered with param().
template <class T>
class Tape {
 public:
  /// Receives the gradient of the op output and accumulates into its inputs.
  using BackwardFn = std::function<void(Tape&, std::span<const T>)>;

  explicit Tape(GradMode mode = GradMode::enabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return mode_ == GradMode::enabled; }

  Var input(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), nullptr, nullptr, false, {}});
    return Var{nodes_.size() - 1};
  }

  /// Registers a parameter leaf. Registering the same tensor twice returns
  /// the same handle. The tensor must outlive the tape.
  Var param(Tensor<T>& p) {
    if (auto it = param_index_.find(&p); it != param_index_.end()) return Var{it->second};
    nodes_.push_back(Node{Tensor<T>{}, &p, &p, grad_enabled(), {}});
    param_index_.emplace(&p, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
  }

  /// Registers a read-only parameter leaf; it never receives a gradient.
  Var param(const Tensor<T>& p) {
    if (auto it = param_index_.find(&p); it != param_index_.end()) return Var{it->second};
    nodes_.push_back(Node{Tensor<T>{}, &p, nullptr, false, {}});
    param_index_.emplace(&p, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of a node from the most recent backward(); empty when the node
  /// was not reached.
  std::span<const T> grad(Var v) const { return node(v).grad; }

  /// Zero-initialised gradient buffer of a node, for op implementations.
  std::vector<T>& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(value(v).size(), T{0});
    return n.grad;
  }

  /// Appends an op output. The closure is kept only when gradients are
  /// enabled and some input requires them.
  Var record(Tensor<T> out, bool requires_grad, BackwardFn fn) {
    const bool keep = grad_enabled() && requires_grad;
    nodes_.push_back(Node{std::move(out), nullptr, nullptr, keep, {}});
    Var v{nodes_.size() - 1};
    if (keep) ops_.push_back(Op{v, std::move(fn)});
    return v;
  }

  void backward(Var loss) {
    if (!grad_enabled()) throw UsageError("backward on a tape recorded without gradients");
    if (value(loss).size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + shape_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(loss)[0] = T{1};
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      Node& out = node(it->out);
      if (out.grad.empty()) continue;
      it->fn(*this, out.grad);
    }
    for (auto& [tensor, id] : param_index_) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.target == nullptr) continue;
      auto& g = n.target->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      for (T x : g) {
        if (!std::isfinite(x)) throw NumericError("non-finite parameter gradient");
      }
    }
  }

  std::size_t num_ops() const { return ops_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref;
    Tensor<T>* target;
    bool requires_grad;
    std::vector<T> grad;
  };
  struct Op {
    Var out;
    BackwardFn fn;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
    return nodes_[v.id];
  }

  GradMode mode_;
  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_index_;
};

}  // namespace uda
