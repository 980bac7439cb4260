#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "maeface/ndgrad/tensor.hpp"

namespace maeface {

enum class OpKind {
  leaf,
  matmul,
  linear,
  add,
  sub,
  mul,
  scale,
  gelu,
  sigmoid,
  exp,
  log,
  abs,
  square,
  sum,
  mean,
  layer_norm,
  softmax,
  index_select,
  reshape,
  attention,
  unshuffle,
  sample_scale,
  custom,
};

std::string_view op_name(OpKind kind);

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Reverse-mode tape. Nodes are appended as ops execute, so every node's
// inputs precede it; backward() walks the list once in reverse.
template <typename T>
class Tape {
 public:
  // Receives the output gradient and accumulates into input gradients via
  // grad_buffer().
  using Backward = std::function<void(Tape&, const std::vector<T>&)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    std::size_t output;
    Backward backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Appends an op output. A node is recorded only if some input needs a
  // gradient; otherwise the output is stored as a constant.
  Var<T> record(OpKind kind, Tensor<T> output, std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> record(OpKind kind, Tensor<T> output, std::span<const Var<T>> inputs, Backward backward);

  const Tensor<T>& value(std::size_t id) const { return values_[id]; }
  const Tensor<T>& value(Var<T> v) const { return values_[v.id]; }
  bool requires_grad(std::size_t id) const { return values_[id].requires_grad(); }

  // Gradient accumulator for `id`, zero-initialized on first use.
  std::vector<T>& grad_buffer(std::size_t id) { return values_[id].ensure_grad(); }

  // Empty when no gradient reached `v`.
  const std::vector<T>& grad(Var<T> v) const { return values_[v.id].grad(); }

  // Populates gradients of every requires_grad leaf. Leaf gradients
  // accumulate across calls; intermediate gradients are recomputed.
  void backward(Var<T> loss);
  void zero_grad();

  std::span<const Node> nodes() const { return nodes_; }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<Tensor<T>> values_;
  std::vector<char> is_leaf_;
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

}  // namespace maeface
