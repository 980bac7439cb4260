#pragma once

// Differentiable operations. Each records its backward rule on the tape of
// its inputs. Binary elementwise ops broadcast the second operand when its
// shape is a trailing suffix of the first operand's shape or a single value.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "maeface/ndgrad/tape.hpp"

namespace maeface {

// a[..., m, k] x b[k, n] -> [..., m, n]; leading axes of a are flattened
// into rows.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// x[..., in] * w[in, out] + bias[out]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

enum class Elementwise { add, sub, mul, scale, gelu, sigmoid, exp, log, abs, square };

// Binary kinds take two inputs, unary kinds one; `factor` is used by scale.
template <typename T>
Var<T> elementwise(Elementwise kind, std::span<const Var<T>> inputs, T factor = T(1));

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> exp(Var<T> x);
template <typename T>
Var<T> log(Var<T> x);
template <typename T>
Var<T> abs(Var<T> x);
template <typename T>
Var<T> square(Var<T> x);

enum class Reduce { sum, mean };

// Full reduction yields shape {1}; an axis reduction drops that axis.
template <typename T>
Var<T> reduce(Reduce kind, Var<T> x, std::optional<std::size_t> axis = std::nullopt);

template <typename T>
Var<T> sum(Var<T> x) {
  return reduce(Reduce::sum, x);
}
template <typename T>
Var<T> mean(Var<T> x) {
  return reduce(Reduce::mean, x);
}

// Normalizes over the last axis, then applies gamma/beta of that extent.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6));

// Over the last axis, max-subtracted.
template <typename T>
Var<T> softmax(Var<T> x);

// x[N, ...] -> [|idx|, ...]; backward scatters additively.
template <typename T>
Var<T> index_select(Var<T> x, std::span<const std::size_t> idx);

// x[B, N, D] with one index list per batch item, all of equal length V ->
// [B, V, D].
template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<std::vector<std::size_t>>& idx);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Multi-head scaled dot-product self-attention over a packed projection
// qkv[B, T, 3D] laid out as [q | k | v]; returns [B, T, D].
template <typename T>
Var<T> attention(Var<T> qkv, std::size_t heads);

// Scatters latent[B, V, D] back to [B, N, D]: row perm[b][i] receives
// latent[b, i] for i < V and the shared token otherwise.
template <typename T>
Var<T> unshuffle_tokens(Var<T> latent, Var<T> token, const std::vector<std::vector<std::size_t>>& perms);

// y[b, ...] = factors[b] * x[b, ...]; factors are constants.
template <typename T>
Var<T> sample_scale(Var<T> x, std::span<const T> factors);

// Exact-erf GELU and its derivative, exposed for tests.
template <typename T>
T gelu_value(T x);
template <typename T>
T gelu_derivative(T x);

}  // namespace maeface
