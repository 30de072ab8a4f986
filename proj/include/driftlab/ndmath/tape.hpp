#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "driftlab/ndmath/tensor.hpp"

namespace driftlab {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates d(out)/d(input_i) into grad_inputs[i]; entries are null for inputs
/// that do not need a gradient.
using BackwardRule = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

/// Gradients of one backward pass, keyed by leaf.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const {
    if (leaf.id() >= by_node_.size() || by_node_[leaf.id()].empty()) {
      throw std::out_of_range("no gradient recorded for node " + std::to_string(leaf.id()));
    }
    return by_node_[leaf.id()];
  }

 private:
  friend class Tape;
  std::vector<Tensor> by_node_;
};

/**
 * Define-by-run reverse-mode tape.
 *
 * Nodes are appended in evaluation order, so the node list is already a
 * topological order and backward() is one reverse sweep. Build a fresh tape for
 * every forward pass.
 */
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable / optimizable input.
  Var leaf(Tensor value) { return push(std::move(value), {}, nullptr, true, true); }

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false, false); }

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
    return push(std::move(value), std::move(inputs), needs ? std::move(rule) : nullptr, needs, false);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const Tensor& value_at(std::size_t id) const { return nodes_.at(id).value; }
  /// Id the next recorded node will receive.
  std::size_t next_id() const noexcept { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// d(output)/d(leaf) for every leaf; intermediate gradients are dropped.
  Gradients backward(Var output) const {
    if (output.tape() != this) throw std::invalid_argument("backward: output belongs to another tape");
    const Tensor& out = value(output);
    if (!out.is_scalar()) {
      throw std::invalid_argument("backward: output must be a scalar, got " + out.shape());
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[output.id()] = Tensor::scalar(1.0);

    std::vector<Tensor*> slots;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.rule || grads[i].empty()) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t in = node.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.rows(), nodes_[in].value.cols());
        slots[k] = &grads[in];
      }
      node.rule(grads[i], slots);
      if (!node.is_leaf) grads[i] = Tensor();
    }

    Gradients result;
    result.by_node_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].is_leaf) continue;
      result.by_node_[i] = grads[i].empty() ? Tensor(nodes_[i].value.rows(), nodes_[i].value.cols())
                                            : std::move(grads[i]);
    }
    return result;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    bool requires_grad;
    bool is_leaf;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule, bool requires_grad,
           bool is_leaf) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(rule), requires_grad, is_leaf});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace driftlab
