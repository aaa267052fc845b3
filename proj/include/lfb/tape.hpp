#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lfb/tensor.hpp"

namespace lfb {

/// Shared handle to a node in a recorded computation: a value plus a
/// lazily-allocated gradient of the same shape. Copies alias the node, which
/// is what lets backward closures captured by value write gradients the
/// caller can see.
template <typename T>
class VarT {
 public:
  VarT() = default;
  explicit VarT(TensorT<T> value)
      : node_(std::make_shared<Node>(Node{std::move(value), {}})) {}

  bool defined() const { return node_ != nullptr; }

  TensorT<T>& value() const { return node_->value; }

  /// Gradient accumulator, zeroed to the value's shape on first access.
  TensorT<T>& grad() const {
    if (!node_->grad.same_shape(node_->value)) {
      node_->grad = TensorT<T>(node_->value.shape());
    }
    return node_->grad;
  }

  void zero_grad() const { node_->grad = TensorT<T>(node_->value.shape()); }

  void accumulate_grad(const TensorT<T>& g) const {
    TensorT<T>& acc = grad();
    if (!acc.same_shape(g)) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) +
                       " does not match value shape " +
                       shape_str(node_->value.shape()));
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc.at(i) += g.at(i);
  }

  /// Node identity; two handles compare equal iff they alias the same node.
  const void* id() const { return node_.get(); }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
  };
  std::shared_ptr<Node> node_;
};

/// Learnable values are ordinary graph nodes; optimizers and checkpoints
/// distinguish them by being handed an explicit list.
template <typename T>
using ParameterT = VarT<T>;

using Var = VarT<double>;
using Parameter = ParameterT<double>;

/// Parameter plus the metadata the optimizer and checkpoint code key on.
/// Names are the stable identity across save/load; `decay` opts the tensor
/// out of weight decay (LayerNorm scales and biases).
template <typename T>
struct NamedParamT {
  std::string name;
  ParameterT<T> param;
  bool decay = true;
};

using NamedParam = NamedParamT<double>;

/// Records one backward closure per op in forward order and replays them in
/// reverse. There is no graph analysis: each op knows its own inputs, so a
/// plain stack of closures is the whole engine.
template <typename T>
class TapeT {
 public:
  void record(std::function<void()> backward) {
    entries_.push_back(std::move(backward));
  }

  /// Caller seeds the terminal gradient first (e.g. loss.grad() = {1}).
  /// Replays most-recent-first, then clears the tape.
  void run_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
};

using Tape = TapeT<double>;

}  // namespace lfb
