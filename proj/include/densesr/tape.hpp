#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

template <typename S>
class Tape;

// Named trainable tensor with a same-shape gradient accumulator.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor<S> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}
};

// A tensor as seen by the differentiation machinery. node < 0 means the
// value is a constant: no gradient is tracked through it.
template <typename S>
struct Var {
  Tensor<S> value;
  int node = -1;
  Tape<S>* tape = nullptr;

  const Shape& shape() const { return value.shape(); }
  bool tracked() const { return node >= 0; }
};

template <typename S>
Var<S> constant(Tensor<S> value) {
  return Var<S>{std::move(value), -1, nullptr};
}

// Records one forward pass as an ordered list of nodes, each holding the
// closure that propagates its output gradient to its inputs. Replay walks
// the list once, in reverse insertion order; a node's gradient is the sum
// of the contributions accumulated from all of its consumers.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<S>& upstream, Tape<S>& tape)>;

  // Registers a node and returns its id. `backward` may be empty for leaves.
  int emit(Shape shape, BackwardFn backward) {
    nodes_.push_back(NodeRecord{shape, std::move(backward)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  // A tracked input whose gradient can be read back after backward().
  Var<S> leaf(Tensor<S> value) {
    int id = emit(value.shape(), BackwardFn{});
    return Var<S>{std::move(value), id, this};
  }

  // A tracked leaf tied to a parameter; backward() adds into param.grad.
  Var<S> watch(Parameter<S>& param) {
    Var<S> v = leaf(param.value);
    watched_.push_back({v.node, &param});
    return v;
  }

  // Zero-initialized gradient slot for a node; backward closures add into it.
  Tensor<S>& grad_buffer(int node) {
    Tensor<S>& g = grads_[node];
    if (!g.defined()) {
      g = Tensor<S>(nodes_[node].shape);
    }
    return g;
  }

  void accumulate(int node, const Tensor<S>& contribution) {
    grad_buffer(node).add_(contribution);
  }

  // Reverse sweep from a scalar loss. The tape is single-use: a second
  // backward on the same recording is an error, not a silent re-run.
  void backward(const Var<S>& loss) {
    if (consumed_) fail_runtime("backward() called twice on the same tape");
    if (!loss.tracked() || loss.tape != this) {
      fail_runtime("backward() needs a loss recorded on this tape");
    }
    if (loss.shape().numel() != 1) {
      fail_runtime("backward() needs a scalar loss, got shape ", loss.shape().str());
    }
    consumed_ = true;
    accumulate(loss.node, Tensor<S>::scalar(S(1)));
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (!grads_[i].defined()) continue;  // not reachable from the loss
      if (nodes_[i].backward) nodes_[i].backward(grads_[i], *this);
    }
    for (const auto& [node, param] : watched_) {
      if (grads_[node].defined()) param->grad.add_(grads_[node]);
    }
  }

  // Gradient of a tracked var after backward(); nullptr when unreachable.
  const Tensor<S>* gradient(const Var<S>& v) const {
    if (!v.tracked()) return nullptr;
    return grads_[v.node].defined() ? &grads_[v.node] : nullptr;
  }

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct NodeRecord {
    Shape shape;
    BackwardFn backward;
  };

  std::vector<NodeRecord> nodes_;
  std::vector<Tensor<S>> grads_;
  std::vector<std::pair<int, Parameter<S>*>> watched_;
  bool consumed_ = false;
};

namespace detail {

// The tape shared by a set of operands; null when all are constants.
template <typename S>
Tape<S>* common_tape(std::initializer_list<const Var<S>*> vars) {
  Tape<S>* tape = nullptr;
  for (const Var<S>* v : vars) {
    if (v->tape == nullptr) continue;
    if (tape == nullptr) {
      tape = v->tape;
    } else if (tape != v->tape) {
      fail_runtime("operands were recorded on different tapes");
    }
  }
  return tape;
}

}  // namespace detail
}  // namespace densesr
