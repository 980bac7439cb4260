#include "maeface/ndgrad/tape.hpp"

#include <string>

namespace maeface {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::linear: return "linear";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::gelu: return "gelu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::softmax: return "softmax";
    case OpKind::index_select: return "index_select";
    case OpKind::reshape: return "reshape";
    case OpKind::attention: return "attention";
    case OpKind::unshuffle: return "unshuffle";
    case OpKind::sample_scale: return "sample_scale";
    case OpKind::custom: return "custom";
  }
  return "unknown";
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  value.set_requires_grad(requires_grad);
  value.clear_grad();
  values_.push_back(std::move(value));
  is_leaf_.push_back(1);
  return Var<T>{this, values_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(OpKind kind, Tensor<T> output, std::initializer_list<Var<T>> inputs, Backward backward) {
  return record(kind, std::move(output), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(OpKind kind, Tensor<T> output, std::span<const Var<T>> inputs, Backward backward) {
  if (debug_checks() && !output.all_finite()) {
    throw NumericalError("ndgrad: non-finite output from op '" + std::string(op_name(kind)) + "'");
  }
  bool needs_grad = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Var<T>& v : inputs) {
    if (v.tape != this) throw Error("ndgrad: input belongs to a different tape");
    ids.push_back(v.id);
    needs_grad = needs_grad || values_[v.id].requires_grad();
  }
  output.set_requires_grad(needs_grad);
  output.clear_grad();
  values_.push_back(std::move(output));
  is_leaf_.push_back(0);
  const std::size_t out = values_.size() - 1;
  if (needs_grad) nodes_.push_back(Node{kind, std::move(ids), out, std::move(backward)});
  return Var<T>{this, out};
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw Error("ndgrad: loss belongs to a different tape");
  if (values_[loss.id].numel() != 1) {
    throw ShapeError("ndgrad: backward() needs a scalar loss, got shape " + shape_str(values_[loss.id].shape()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!is_leaf_[i]) values_[i].clear_grad();
  }
  if (!values_[loss.id].requires_grad()) return;
  values_[loss.id].ensure_grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const std::vector<T>& g = values_[it->output].grad();
    if (g.empty()) continue;
    it->backward(*this, g);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (Tensor<T>& t : values_) t.clear_grad();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace maeface
