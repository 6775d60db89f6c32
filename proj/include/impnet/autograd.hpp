#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "impnet/tensor.hpp"

namespace impnet {

template <class T>
class Tape;

/// Handle to a value on (or off) a tape. Copies share the same node, so a
/// parameter held in a ModelParams map and the copy captured by a backward
/// rule see the same gradient buffer.
template <class T>
class Variable {
 public:
  Variable() = default;

  static Variable parameter(Tensor<T> value) { return Variable(std::move(value), true); }
  static Variable constant(Tensor<T> value) { return Variable(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }

  const Tensor<T>& value() const { return node_->value; }
  /// Mutable access for optimizers and finite-difference probes.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<T>& grad() const {
    if (node_->grad.empty()) throw std::logic_error("variable has no gradient");
    return node_->grad;
  }
  void zero_grad() const { node_->grad = Tensor<T>(); }

  /// Adds `g` into this variable's gradient, allocating it on first use.
  void accumulate_grad(const Tensor<T>& g) const {
    if (!node_->requires_grad) return;
    if (node_->grad.empty()) {
      node_->grad = g;
      return;
    }
    auto dst = node_->grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Gradient buffer for in-place accumulation by backward rules.
  Tensor<T>& grad_buffer() const {
    if (node_->grad.empty()) node_->grad = Tensor<T>(node_->value.shape());
    return node_->grad;
  }

  /// Opaque node identity; stable for the lifetime of the node.
  std::uintptr_t id() const noexcept { return reinterpret_cast<std::uintptr_t>(node_.get()); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
  };

  friend class Tape<T>;

  Variable(Tensor<T> value, bool requires_grad)
      : node_(std::make_shared<Node>(Node{std::move(value), Tensor<T>(), requires_grad})) {}

  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations. A tape belongs to one lane;
/// an inference tape (recording == false) records nothing and all op outputs
/// are constants.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  static Tape inference() { return Tape(false); }

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return records_.size(); }
  void clear() { records_.clear(); }

  /// Creates the output variable of an op. When any input requires a gradient
  /// and the tape is recording, the backward rule is appended.
  Variable<T> emit(Tensor<T> value, std::initializer_list<Variable<T>> inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!recording_ || !needs) return Variable<T>::constant(std::move(value));
    Variable<T> out(std::move(value), true);
    records_.push_back(Record{out, std::move(backward)});
    return out;
  }

  /// Reverse traversal from a scalar root. Gradients accumulate additively
  /// into every requires_grad variable reachable from the root.
  void backward(Variable<T> root) {
    if (root.value().size() != 1) {
      throw std::invalid_argument("backward root must be scalar, got shape " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return;
    root.accumulate_grad(Tensor<T>(root.shape(), T{1}));
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward(it->output.grad());
    }
  }

 private:
  struct Record {
    Variable<T> output;
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Record> records_;
};

template <class T>
void backward(Tape<T>& tape, const Variable<T>& root) {
  tape.backward(root);
}

}  // namespace impnet
