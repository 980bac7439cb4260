#include "maeface/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "maeface/simd/kernels.hpp"

namespace maeface {
namespace {

template <typename T>
const simd::KernelTable<T>& K() {
  return simd::kernels<T>();
}

// Block size of b inside a if b broadcasts into a, else 0.
std::size_t broadcast_block(const Shape& a, const Shape& b) {
  const std::size_t bn = shape_numel(b);
  if (bn == 1) return 1;
  if (b.size() > a.size()) return 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a[a.size() - b.size() + i] != b[i]) return 0;
  }
  return bn;
}

std::string two_shapes(const Shape& a, const Shape& b) { return shape_str(a) + " and " + shape_str(b); }

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  K<T>().axpy(dst.size(), T(1), src.data(), dst.data());
}

// Adds g (length reps*block) into a block-sized buffer, summing over reps.
template <typename T>
void accumulate_reduced(std::vector<T>& dst, const T* g, std::size_t total, T sign) {
  const std::size_t block = dst.size();
  for (std::size_t off = 0; off < total; off += block) K<T>().axpy(block, sign, g + off, dst.data());
}

std::size_t last_dim(const Shape& s) { return s.back(); }

}  // namespace

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
  return cdf + x * pdf;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() != 2 || last_dim(as) != bs[0]) {
    throw ShapeError("matmul: incompatible shapes " + two_shapes(as, bs));
  }
  const std::size_t k = bs[0], n = bs[1], m = shape_numel(as) / k;
  Shape out_shape = as;
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  K<T>().gemm(m, n, k, a.value().raw(), k, b.value().raw(), n, out.raw(), n, false);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(OpKind::matmul, std::move(out), {a, b}, [ia, ib, m, n, k](Tape<T>& t, const std::vector<T>& g) {
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      std::vector<T> bt(k * n);
      simd::transpose(k, n, bv.raw(), bt.data());
      K<T>().gemm(m, k, n, g.data(), n, bt.data(), k, t.grad_buffer(ia).data(), k, true);
    }
    if (t.requires_grad(ib)) {
      std::vector<T> at(m * k);
      simd::transpose(m, k, av.raw(), at.data());
      K<T>().gemm(k, n, m, at.data(), m, g.data(), n, t.grad_buffer(ib).data(), n, true);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || last_dim(xs) != ws[0]) throw ShapeError("linear: incompatible shapes " + two_shapes(xs, ws));
  if (bias.value().numel() != ws[1]) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(ws));
  }
  const std::size_t k = ws[0], n = ws[1], m = shape_numel(xs) / k;
  Shape out_shape = xs;
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  const T* bp = bias.value().raw();
  T* op = out.raw();
  for (std::size_t i = 0; i < m; ++i) std::copy(bp, bp + n, op + i * n);
  K<T>().gemm(m, n, k, x.value().raw(), k, w.value().raw(), n, op, n, true);
  const std::size_t ix = x.id, iw = w.id, ib = bias.id;
  return x.tape->record(OpKind::linear, std::move(out), {x, w, bias},
                        [ix, iw, ib, m, n, k](Tape<T>& t, const std::vector<T>& g) {
                          if (t.requires_grad(ix)) {
                            std::vector<T> wt(k * n);
                            simd::transpose(k, n, t.value(iw).raw(), wt.data());
                            K<T>().gemm(m, k, n, g.data(), n, wt.data(), k, t.grad_buffer(ix).data(), k, true);
                          }
                          if (t.requires_grad(iw)) {
                            std::vector<T> xt(m * k);
                            simd::transpose(m, k, t.value(ix).raw(), xt.data());
                            K<T>().gemm(k, n, m, xt.data(), m, g.data(), n, t.grad_buffer(iw).data(), n, true);
                          }
                          if (t.requires_grad(ib)) accumulate_reduced(t.grad_buffer(ib), g.data(), m * n, T(1));
                        });
}

namespace {

template <typename T>
Var<T> binary(Elementwise kind, Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t block = broadcast_block(as, bs);
  if (block == 0) {
    // Commutative kinds accept the broadcast operand on the left.
    if ((kind == Elementwise::add || kind == Elementwise::mul) && broadcast_block(bs, as) != 0) {
      return binary(kind, b, a);
    }
    throw ShapeError(std::string("elementwise: shapes are not broadcast-compatible: ") + two_shapes(as, bs));
  }
  const std::size_t n = a.value().numel();
  Tensor<T> out(as);
  const T* ap = a.value().raw();
  const T* bp = b.value().raw();
  T* op = out.raw();
  for (std::size_t off = 0; off < n; off += block) {
    switch (kind) {
      case Elementwise::add: K<T>().add(block, ap + off, bp, op + off); break;
      case Elementwise::sub:
        for (std::size_t i = 0; i < block; ++i) op[off + i] = ap[off + i] - bp[i];
        break;
      case Elementwise::mul: K<T>().mul(block, ap + off, bp, op + off); break;
      default: throw Error("elementwise: not a binary kind");
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  const OpKind op_kind = kind == Elementwise::add ? OpKind::add : kind == Elementwise::sub ? OpKind::sub : OpKind::mul;
  return a.tape->record(op_kind, std::move(out), {a, b}, [kind, ia, ib, n, block](Tape<T>& t, const std::vector<T>& g) {
    if (kind == Elementwise::mul) {
      const T* av = t.value(ia).raw();
      const T* bv = t.value(ib).raw();
      if (t.requires_grad(ia)) {
        std::vector<T>& ga = t.grad_buffer(ia);
        for (std::size_t off = 0; off < n; off += block) {
          for (std::size_t i = 0; i < block; ++i) ga[off + i] += g[off + i] * bv[i];
        }
      }
      if (t.requires_grad(ib)) {
        std::vector<T>& gb = t.grad_buffer(ib);
        for (std::size_t off = 0; off < n; off += block) {
          for (std::size_t i = 0; i < block; ++i) gb[i] += g[off + i] * av[off + i];
        }
      }
      return;
    }
    if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      accumulate_reduced(t.grad_buffer(ib), g.data(), n, kind == Elementwise::sub ? T(-1) : T(1));
    }
  });
}

template <typename T>
Var<T> unary(Elementwise kind, Var<T> x, T factor) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.numel();
  Tensor<T> out(xv.shape());
  const T* xp = xv.raw();
  T* op = out.raw();
  OpKind op_kind = OpKind::custom;
  switch (kind) {
    case Elementwise::scale:
      K<T>().scale(n, factor, xp, op);
      op_kind = OpKind::scale;
      break;
    case Elementwise::gelu:
      for (std::size_t i = 0; i < n; ++i) op[i] = gelu_value(xp[i]);
      op_kind = OpKind::gelu;
      break;
    case Elementwise::sigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xp[i];
        if (v >= T(0)) {
          op[i] = T(1) / (T(1) + std::exp(-v));
        } else {
          const T e = std::exp(v);
          op[i] = e / (T(1) + e);
        }
      }
      op_kind = OpKind::sigmoid;
      break;
    case Elementwise::exp:
      for (std::size_t i = 0; i < n; ++i) op[i] = std::exp(xp[i]);
      op_kind = OpKind::exp;
      break;
    case Elementwise::log:
      if (debug_checks()) {
        for (std::size_t i = 0; i < n; ++i) {
          if (!(xp[i] > T(0))) throw DomainError("log: non-positive input " + std::to_string(xp[i]));
        }
      }
      for (std::size_t i = 0; i < n; ++i) op[i] = std::log(xp[i]);
      op_kind = OpKind::log;
      break;
    case Elementwise::abs:
      if (debug_checks()) {
        for (std::size_t i = 0; i < n; ++i) {
          if (xp[i] == T(0)) throw DomainError("abs: input exactly 0 where the derivative is undefined");
        }
      }
      for (std::size_t i = 0; i < n; ++i) op[i] = std::abs(xp[i]);
      op_kind = OpKind::abs;
      break;
    case Elementwise::square:
      K<T>().mul(n, xp, xp, op);
      op_kind = OpKind::square;
      break;
    default: throw Error("elementwise: not a unary kind");
  }
  const std::size_t ix = x.id;
  const std::size_t iy = x.tape->size();  // id the output will receive
  return x.tape->record(op_kind, std::move(out), {x}, [kind, ix, iy, n, factor](Tape<T>& t, const std::vector<T>& g) {
    if (!t.requires_grad(ix)) return;
    std::vector<T>& gx = t.grad_buffer(ix);
    const T* xp = t.value(ix).raw();
    const T* yp = t.value(iy).raw();
    switch (kind) {
      case Elementwise::scale: K<T>().axpy(n, factor, g.data(), gx.data()); break;
      case Elementwise::gelu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * gelu_derivative(xp[i]);
        break;
      case Elementwise::sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * yp[i] * (T(1) - yp[i]);
        break;
      case Elementwise::exp:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * yp[i];
        break;
      case Elementwise::log:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / xp[i];
        break;
      case Elementwise::abs:
        for (std::size_t i = 0; i < n; ++i) gx[i] += xp[i] > T(0) ? g[i] : (xp[i] < T(0) ? -g[i] : T(0));
        break;
      case Elementwise::square:
        for (std::size_t i = 0; i < n; ++i) gx[i] += T(2) * xp[i] * g[i];
        break;
      default: break;
    }
  });
}

bool is_binary(Elementwise kind) {
  return kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul;
}

}  // namespace

template <typename T>
Var<T> elementwise(Elementwise kind, std::span<const Var<T>> inputs, T factor) {
  const std::size_t want = is_binary(kind) ? 2 : 1;
  if (inputs.size() != want) {
    throw Error("elementwise: expected " + std::to_string(want) + " inputs, got " + std::to_string(inputs.size()));
  }
  return is_binary(kind) ? binary(kind, inputs[0], inputs[1]) : unary(kind, inputs[0], factor);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(Elementwise::add, a, b);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(Elementwise::sub, a, b);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(Elementwise::mul, a, b);
}
template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return unary(Elementwise::scale, a, factor);
}
template <typename T>
Var<T> gelu(Var<T> x) {
  return unary(Elementwise::gelu, x, T(1));
}
template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(Elementwise::sigmoid, x, T(1));
}
template <typename T>
Var<T> exp(Var<T> x) {
  return unary(Elementwise::exp, x, T(1));
}
template <typename T>
Var<T> log(Var<T> x) {
  return unary(Elementwise::log, x, T(1));
}
template <typename T>
Var<T> abs(Var<T> x) {
  return unary(Elementwise::abs, x, T(1));
}
template <typename T>
Var<T> square(Var<T> x) {
  return unary(Elementwise::square, x, T(1));
}

template <typename T>
Var<T> reduce(Reduce kind, Var<T> x, std::optional<std::size_t> axis) {
  const Tensor<T>& xv = x.value();
  const Shape& xs = xv.shape();
  const std::size_t ix = x.id;
  if (!axis) {
    const std::size_t n = xv.numel();
    T s = K<T>().sum(xv.raw(), n);
    const T factor = kind == Reduce::mean ? T(1) / T(n) : T(1);
    return x.tape->record(kind == Reduce::mean ? OpKind::mean : OpKind::sum, Tensor<T>::scalar(s * factor), {x},
                          [ix, n, factor](Tape<T>& t, const std::vector<T>& g) {
                            if (!t.requires_grad(ix)) return;
                            std::vector<T>& gx = t.grad_buffer(ix);
                            const T v = g[0] * factor;
                            for (std::size_t i = 0; i < n; ++i) gx[i] += v;
                          });
  }
  const std::size_t ax = *axis;
  if (ax >= xs.size()) {
    throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for shape " + shape_str(xs));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= xs[i];
  for (std::size_t i = ax + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = xs[ax];
  Shape out_shape;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i != ax) out_shape.push_back(xs[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const T factor = kind == Reduce::mean ? T(1) / T(len) : T(1);
  const T* xp = xv.raw();
  T* op = out.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    T* dst = op + o * inner;
    for (std::size_t l = 0; l < len; ++l) K<T>().axpy(inner, T(1), xp + (o * len + l) * inner, dst);
    if (factor != T(1)) K<T>().scale(inner, factor, dst, dst);
  }
  return x.tape->record(kind == Reduce::mean ? OpKind::mean : OpKind::sum, std::move(out), {x},
                        [ix, outer, inner, len, factor](Tape<T>& t, const std::vector<T>& g) {
                          if (!t.requires_grad(ix)) return;
                          std::vector<T>& gx = t.grad_buffer(ix);
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t l = 0; l < len; ++l) {
                              K<T>().axpy(inner, factor, g.data() + o * inner, gx.data() + (o * len + l) * inner);
                            }
                          }
                        });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Shape& xs = x.shape();
  const std::size_t d = last_dim(xs);
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw ShapeError("layer_norm: gamma/beta " + two_shapes(gamma.shape(), beta.shape()) + " do not match input " +
                     shape_str(xs));
  }
  if (!(eps > T(0))) throw DomainError("layer_norm: eps must be positive");
  const std::size_t rows = shape_numel(xs) / d;
  Tensor<T> out(xs);
  std::vector<T> xhat(rows * d);
  std::vector<T> rstd(rows);
  const T* xp = x.value().raw();
  const T* gp = gamma.value().raw();
  const T* bp = beta.value().raw();
  T* op = out.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    const T mu = K<T>().sum(row, d) / T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    T* xh = xhat.data() + r * d;
    T* o = op + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mu) * rs;
      o[j] = xh[j] * gp[j] + bp[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      OpKind::layer_norm, std::move(out), {x, gamma, beta},
      [ix, ig, ib, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, const std::vector<T>& g) {
        const T* gp = t.value(ig).raw();
        if (t.requires_grad(ig)) {
          std::vector<T>& gg = t.grad_buffer(ig);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
          }
        }
        if (t.requires_grad(ib)) accumulate_reduced(t.grad_buffer(ib), g.data(), rows * d, T(1));
        if (t.requires_grad(ix)) {
          std::vector<T>& gx = t.grad_buffer(ix);
          std::vector<T> dxh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * d;
            const T* xh = xhat.data() + r * d;
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              dxh[j] = gr[j] * gp[j];
              mean_d += dxh[j];
              mean_dx += dxh[j] * xh[j];
            }
            mean_d /= T(d);
            mean_dx /= T(d);
            T* out = gx.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) out[j] += rstd[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

namespace {

template <typename T>
void softmax_row(const T* in, T* out, std::size_t d) {
  T mx = in[0];
  for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
  T s = T(0);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = std::exp(in[j] - mx);
    s += out[j];
  }
  const T inv = T(1) / s;
  for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
}

// gx += y * (g - <g, y>) for one row
template <typename T>
void softmax_row_backward(const T* y, const T* g, T* gx, std::size_t d) {
  const T dotp = K<T>().dot(g, y, d);
  for (std::size_t j = 0; j < d; ++j) gx[j] += y[j] * (g[j] - dotp);
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> x) {
  const Shape& xs = x.shape();
  const std::size_t d = last_dim(xs);
  const std::size_t rows = shape_numel(xs) / d;
  Tensor<T> out(xs);
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.value().raw() + r * d, out.raw() + r * d, d);
  const std::size_t ix = x.id;
  const std::size_t iy = x.tape->size();
  return x.tape->record(OpKind::softmax, std::move(out), {x}, [ix, iy, rows, d](Tape<T>& t, const std::vector<T>& g) {
    if (!t.requires_grad(ix)) return;
    std::vector<T>& gx = t.grad_buffer(ix);
    const T* y = t.value(iy).raw();
    for (std::size_t r = 0; r < rows; ++r) softmax_row_backward(y + r * d, g.data() + r * d, gx.data() + r * d, d);
  });
}

template <typename T>
Var<T> index_select(Var<T> x, std::span<const std::size_t> idx) {
  const Shape& xs = x.shape();
  const std::size_t n = xs[0];
  const std::size_t d = shape_numel(xs) / n;
  if (idx.empty()) throw ShapeError("index_select: empty index list");
  for (std::size_t i : idx) {
    if (i >= n) throw ShapeError("index_select: index " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
  }
  Shape out_shape = xs;
  out_shape[0] = idx.size();
  Tensor<T> out(out_shape);
  const T* xp = x.value().raw();
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy(xp + idx[r] * d, xp + (idx[r] + 1) * d, out.raw() + r * d);
  const std::size_t ix = x.id;
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return x.tape->record(OpKind::index_select, std::move(out), {x},
                        [ix, d, rows = std::move(rows)](Tape<T>& t, const std::vector<T>& g) {
                          if (!t.requires_grad(ix)) return;
                          std::vector<T>& gx = t.grad_buffer(ix);
                          for (std::size_t r = 0; r < rows.size(); ++r) {
                            K<T>().axpy(d, T(1), g.data() + r * d, gx.data() + rows[r] * d);
                          }
                        });
}

template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<std::vector<std::size_t>>& idx) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || idx.size() != xs[0]) {
    throw ShapeError("gather_rows: expected [B,N,D] with B index lists, got " + shape_str(xs) + " and " +
                     std::to_string(idx.size()) + " lists");
  }
  const std::size_t batch = xs[0], n = xs[1], d = xs[2];
  const std::size_t v = idx.empty() ? 0 : idx[0].size();
  if (v == 0) throw ShapeError("gather_rows: empty index list");
  for (const auto& list : idx) {
    if (list.size() != v) throw ShapeError("gather_rows: index lists differ in length");
    for (std::size_t i : list) {
      if (i >= n) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
    }
  }
  Tensor<T> out(Shape{batch, v, d});
  const T* xp = x.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < v; ++r) {
      const T* src = xp + (b * n + idx[b][r]) * d;
      std::copy(src, src + d, out.raw() + (b * v + r) * d);
    }
  }
  const std::size_t ix = x.id;
  return x.tape->record(OpKind::index_select, std::move(out), {x}, [ix, batch, n, v, d, idx](Tape<T>& t, const std::vector<T>& g) {
    if (!t.requires_grad(ix)) return;
    std::vector<T>& gx = t.grad_buffer(ix);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < v; ++r) {
        K<T>().axpy(d, T(1), g.data() + (b * v + r) * d, gx.data() + (b * n + idx[b][r]) * d);
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return x.tape->record(OpKind::reshape, std::move(out), {x}, [ix](Tape<T>& t, const std::vector<T>& g) {
    if (t.requires_grad(ix)) accumulate(t.grad_buffer(ix), g);
  });
}

template <typename T>
Var<T> attention(Var<T> qkv, std::size_t heads) {
  const Shape& s = qkv.shape();
  if (s.size() != 3 || s[2] % 3 != 0) throw ShapeError("attention: expected qkv [B,T,3D], got " + shape_str(s));
  const std::size_t batch = s[0], tokens = s[1], width = s[2] / 3;
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = width / heads;
  const T scale_f = T(1) / std::sqrt(T(dh));
  const auto& k = K<T>();
  Tensor<T> out(Shape{batch, tokens, width});
  std::vector<T> probs(batch * heads * tokens * tokens);
  std::vector<T> q(tokens * dh), kt(dh * tokens), v(tokens * dh), o(tokens * dh);
  const T* src = qkv.value().raw();
  const std::size_t row = 3 * width;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < tokens; ++i) {
        const T* r = src + (b * tokens + i) * row + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
          q[i * dh + c] = r[c] * scale_f;
          kt[c * tokens + i] = r[width + c];
          v[i * dh + c] = r[2 * width + c];
        }
      }
      T* a = probs.data() + (b * heads + h) * tokens * tokens;
      k.gemm(tokens, tokens, dh, q.data(), dh, kt.data(), tokens, a, tokens, false);
      for (std::size_t i = 0; i < tokens; ++i) softmax_row(a + i * tokens, a + i * tokens, tokens);
      k.gemm(tokens, dh, tokens, a, tokens, v.data(), dh, o.data(), dh, false);
      for (std::size_t i = 0; i < tokens; ++i) {
        std::copy(o.data() + i * dh, o.data() + (i + 1) * dh, out.raw() + (b * tokens + i) * width + h * dh);
      }
    }
  }
  const std::size_t iq = qkv.id;
  return qkv.tape->record(
      OpKind::attention, std::move(out), {qkv},
      [iq, batch, tokens, width, heads, dh, scale_f, probs = std::move(probs)](Tape<T>& t, const std::vector<T>& g) {
        if (!t.requires_grad(iq)) return;
        const auto& k = K<T>();
        const T* src = t.value(iq).raw();
        std::vector<T>& gq = t.grad_buffer(iq);
        const std::size_t row = 3 * width;
        std::vector<T> q(tokens * dh), kk(tokens * dh), vt(dh * tokens), go(tokens * dh);
        std::vector<T> da(tokens * tokens), at(tokens * tokens), dst(tokens * tokens);
        std::vector<T> dq(tokens * dh), dk(tokens * dh), dv(tokens * dh);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < tokens; ++i) {
              const T* r = src + (b * tokens + i) * row + h * dh;
              const T* gr = g.data() + (b * tokens + i) * width + h * dh;
              for (std::size_t c = 0; c < dh; ++c) {
                q[i * dh + c] = r[c];
                kk[i * dh + c] = r[width + c];
                vt[c * tokens + i] = r[2 * width + c];
                go[i * dh + c] = gr[c];
              }
            }
            const T* a = probs.data() + (b * heads + h) * tokens * tokens;
            // dA = dO * V^T ; dV = A^T * dO
            k.gemm(tokens, tokens, dh, go.data(), dh, vt.data(), tokens, da.data(), tokens, false);
            simd::transpose(tokens, tokens, a, at.data());
            k.gemm(tokens, dh, tokens, at.data(), tokens, go.data(), dh, dv.data(), dh, false);
            // dS = softmax backward, folded with the 1/sqrt(dh) scale
            std::fill(dst.begin(), dst.end(), T(0));
            for (std::size_t i = 0; i < tokens; ++i) {
              softmax_row_backward(a + i * tokens, da.data() + i * tokens, dst.data() + i * tokens, tokens);
            }
            k.scale(tokens * tokens, scale_f, dst.data(), dst.data());
            // dQ = dS * K ; dK = dS^T * Q
            k.gemm(tokens, dh, tokens, dst.data(), tokens, kk.data(), dh, dq.data(), dh, false);
            simd::transpose(tokens, tokens, dst.data(), at.data());
            k.gemm(tokens, dh, tokens, at.data(), tokens, q.data(), dh, dk.data(), dh, false);
            for (std::size_t i = 0; i < tokens; ++i) {
              T* gr = gq.data() + (b * tokens + i) * row + h * dh;
              for (std::size_t c = 0; c < dh; ++c) {
                gr[c] += dq[i * dh + c];
                gr[width + c] += dk[i * dh + c];
                gr[2 * width + c] += dv[i * dh + c];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> unshuffle_tokens(Var<T> latent, Var<T> token, const std::vector<std::vector<std::size_t>>& perms) {
  const Shape& ls = latent.shape();
  if (ls.size() != 3 || perms.size() != ls[0]) {
    throw ShapeError("unshuffle_tokens: expected latent [B,V,D] with B permutations, got " + shape_str(ls));
  }
  const std::size_t batch = ls[0], v = ls[1], d = ls[2];
  if (token.value().numel() != d) {
    throw ShapeError("unshuffle_tokens: token " + shape_str(token.shape()) + " does not match width " + std::to_string(d));
  }
  const std::size_t n = perms[0].size();
  if (n < v) throw ShapeError("unshuffle_tokens: permutation shorter than visible count");
  for (const auto& p : perms) {
    if (p.size() != n) throw ShapeError("unshuffle_tokens: permutations differ in length");
    for (std::size_t i : p) {
      if (i >= n) throw ShapeError("unshuffle_tokens: permutation entry out of range");
    }
  }
  Tensor<T> out(Shape{batch, n, d});
  const T* lp = latent.value().raw();
  const T* tp = token.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = i < v ? lp + (b * v + i) * d : tp;
      std::copy(src, src + d, out.raw() + (b * n + perms[b][i]) * d);
    }
  }
  const std::size_t il = latent.id, it = token.id;
  return latent.tape->record(OpKind::unshuffle, std::move(out), {latent, token},
                             [il, it, batch, v, n, d, perms](Tape<T>& t, const std::vector<T>& g) {
                               const bool gl = t.requires_grad(il), gt = t.requires_grad(it);
                               for (std::size_t b = 0; b < batch; ++b) {
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const T* src = g.data() + (b * n + perms[b][i]) * d;
                                   if (i < v) {
                                     if (gl) K<T>().axpy(d, T(1), src, t.grad_buffer(il).data() + (b * v + i) * d);
                                   } else if (gt) {
                                     K<T>().axpy(d, T(1), src, t.grad_buffer(it).data());
                                   }
                                 }
                               }
                             });
}

template <typename T>
Var<T> sample_scale(Var<T> x, std::span<const T> factors) {
  const Shape& xs = x.shape();
  if (xs[0] != factors.size()) {
    throw ShapeError("sample_scale: " + std::to_string(factors.size()) + " factors for batch of " + std::to_string(xs[0]));
  }
  const std::size_t per = shape_numel(xs) / xs[0];
  Tensor<T> out(xs);
  for (std::size_t b = 0; b < xs[0]; ++b) K<T>().scale(per, factors[b], x.value().raw() + b * per, out.raw() + b * per);
  const std::size_t ix = x.id;
  std::vector<T> f(factors.begin(), factors.end());
  return x.tape->record(OpKind::sample_scale, std::move(out), {x}, [ix, per, f = std::move(f)](Tape<T>& t, const std::vector<T>& g) {
    if (!t.requires_grad(ix)) return;
    std::vector<T>& gx = t.grad_buffer(ix);
    for (std::size_t b = 0; b < f.size(); ++b) K<T>().axpy(per, f[b], g.data() + b * per, gx.data() + b * per);
  });
}

#define MAEFACE_INSTANTIATE_OPS(T)                                                                             \
  template T gelu_value<T>(T);                                                                                 \
  template T gelu_derivative<T>(T);                                                                            \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                                   \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                                           \
  template Var<T> elementwise<T>(Elementwise, std::span<const Var<T>>, T);                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                      \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                      \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                      \
  template Var<T> scale<T>(Var<T>, T);                                                                         \
  template Var<T> gelu<T>(Var<T>);                                                                             \
  template Var<T> sigmoid<T>(Var<T>);                                                                          \
  template Var<T> exp<T>(Var<T>);                                                                              \
  template Var<T> log<T>(Var<T>);                                                                              \
  template Var<T> abs<T>(Var<T>);                                                                              \
  template Var<T> square<T>(Var<T>);                                                                           \
  template Var<T> reduce<T>(Reduce, Var<T>, std::optional<std::size_t>);                                       \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                                    \
  template Var<T> softmax<T>(Var<T>);                                                                          \
  template Var<T> index_select<T>(Var<T>, std::span<const std::size_t>);                                       \
  template Var<T> gather_rows<T>(Var<T>, const std::vector<std::vector<std::size_t>>&);                        \
  template Var<T> reshape<T>(Var<T>, Shape);                                                                   \
  template Var<T> attention<T>(Var<T>, std::size_t);                                                           \
  template Var<T> unshuffle_tokens<T>(Var<T>, Var<T>, const std::vector<std::vector<std::size_t>>&);           \
  template Var<T> sample_scale<T>(Var<T>, std::span<const T>);

MAEFACE_INSTANTIATE_OPS(float)
MAEFACE_INSTANTIATE_OPS(double)

}  // namespace maeface
