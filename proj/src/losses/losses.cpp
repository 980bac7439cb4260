#include "maeface/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "maeface/error.hpp"

namespace maeface {

std::string_view reduction_name(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

Reduction parse_reduction(std::string_view s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  throw ConfigError("unknown reduction '" + std::string(s) + "' (expected mean or sum)");
}

std::string_view flavor_name(LossFlavor f) { return f == LossFlavor::l1 ? "l1" : "l2"; }

LossFlavor parse_flavor(std::string_view s) {
  if (s == "l1" || s == "L1") return LossFlavor::l1;
  if (s == "l2" || s == "L2") return LossFlavor::l2;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected l1 or l2)");
}

template <typename T>
PretrainTargets<T> raw_targets(const Tensor<T>& patches) {
  PretrainTargets<T> t;
  t.patches = patches;
  return t;
}

template <typename T>
PretrainTargets<T> patch_normalize(const Tensor<T>& patches, T eps) {
  PretrainTargets<T> t;
  t.patches = patches;
  t.normalized = true;
  t.eps = eps;
  const std::size_t d = patches.shape().back(), rows = patches.numel() / d;
  t.mean.resize(rows);
  t.var.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* x = t.patches.raw() + r * d;
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= double(d);
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + double(eps));
    for (std::size_t j = 0; j < d; ++j) x[j] = static_cast<T>((x[j] - mu) * inv);
    t.mean[r] = static_cast<T>(mu);
    t.var[r] = static_cast<T>(var);
  }
  return t;
}

template <typename T>
Tensor<T> denormalize_patches(const Tensor<T>& pred, const PretrainTargets<T>& targets) {
  if (!targets.normalized) return pred;
  if (pred.shape() != targets.patches.shape()) throw ShapeError("denormalize_patches: shape mismatch");
  Tensor<T> out = pred;
  const std::size_t d = pred.shape().back();
  for (std::size_t r = 0; r < targets.mean.size(); ++r) {
    const T s = std::sqrt(targets.var[r] + targets.eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = out[r * d + j] * s + targets.mean[r];
  }
  return out;
}

template <typename T>
Var<T> loss_pretrain(Var<T> pred, const PretrainTargets<T>& targets, std::span<const MaskPlan> plans, LossFlavor flavor,
                     Reduction reduction) {
  const Shape& ps = pred.shape();
  if (ps != targets.patches.shape()) {
    throw ShapeError("loss_pretrain: prediction " + shape_str(ps) + " vs target " + shape_str(targets.patches.shape()));
  }
  const std::size_t batch = ps.size() == 3 ? ps[0] : 1;
  if (ps.size() < 2 || ps.size() > 3 || plans.size() != batch) {
    throw ShapeError("loss_pretrain: expected [B,N,P] with B plans, got " + shape_str(ps) + " and " +
                     std::to_string(plans.size()) + " plans");
  }
  const std::size_t n = ps[ps.size() - 2], d = ps.back();
  std::vector<std::size_t> rows;  // flat masked row indices
  for (std::size_t b = 0; b < batch; ++b) {
    if (plans[b].size() != n) throw ShapeError("loss_pretrain: plan size differs from patch count");
    for (std::size_t r : plans[b].masked()) rows.push_back(b * n + r);
  }
  if (rows.empty()) throw DomainError("loss_pretrain: no masked patches (mask ratio 0 leaves nothing to reconstruct)");

  const T norm = reduction == Reduction::mean ? T(1) / T(rows.size() * d) : T(1) / T(batch);
  const T* p = pred.value().raw();
  const T* y = targets.patches.raw();
  double acc = 0;
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = double(p[r * d + j]) - double(y[r * d + j]);
      acc += flavor == LossFlavor::l1 ? std::abs(diff) : diff * diff;
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc * double(norm)));
  const std::size_t ip = pred.id;
  Tensor<T> tgt = targets.patches;
  return pred.tape->record(
      OpKind::custom, std::move(out), {pred},
      [ip, rows = std::move(rows), d, norm, flavor, tgt = std::move(tgt)](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T>& gp = t.grad_buffer(ip);
        const T* pv = t.value(ip).raw();
        const T s = g[0] * norm;
        for (std::size_t r : rows) {
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = r * d + j;
            const T diff = pv[k] - tgt[k];
            if (flavor == LossFlavor::l1) {
              gp[k] += diff > T(0) ? s : (diff < T(0) ? -s : T(0));
            } else {
              gp[k] += T(2) * diff * s;
            }
          }
        }
      });
}

void AULabels::validate(std::size_t num_aus) const {
  if (occurrence) {
    if (occurrence->size() != num_aus) throw DomainError("occurrence labels: expected " + std::to_string(num_aus) + " values");
    for (int v : *occurrence) {
      if (v != 0 && v != 1) throw DomainError("occurrence label " + std::to_string(v) + " outside {0,1}");
    }
  }
  if (intensity) {
    if (intensity->size() != num_aus) throw DomainError("intensity labels: expected " + std::to_string(num_aus) + " values");
    for (int v : *intensity) {
      if (v < 0 || v > 5) throw DomainError("intensity label " + std::to_string(v) + " outside {0..5}");
    }
  }
  if (!valid.empty() && valid.size() != num_aus) throw DomainError("validity mask length differs from AU count");
}

LabelBatch make_label_batch(std::span<const AULabels> labels, std::size_t num_aus, LabelKind kind) {
  LabelBatch lb;
  lb.batch = labels.size();
  lb.aus = num_aus;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const AULabels& l = labels[i];
    l.validate(num_aus);
    const auto& field = kind == LabelKind::occurrence ? l.occurrence : l.intensity;
    if (!field) {
      throw DataError("sample " + std::to_string(i) + " has no " +
                      (kind == LabelKind::occurrence ? "occurrence" : "intensity") + " labels");
    }
    for (std::size_t a = 0; a < num_aus; ++a) {
      lb.target.push_back(kind == LabelKind::occurrence ? double((*field)[a]) : double((*field)[a]) / 5.0);
      lb.valid.push_back(l.is_valid(a) ? 1 : 0);
    }
  }
  return lb;
}

namespace {

template <typename T>
void check_label_shape(const char* who, const Var<T>& x, const LabelBatch& lb) {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[0] != lb.batch || s[1] != lb.aus || lb.target.size() != lb.batch * lb.aus ||
      (!lb.valid.empty() && lb.valid.size() != lb.target.size())) {
    throw ShapeError(std::string(who) + ": output " + shape_str(s) + " vs labels [" + std::to_string(lb.batch) + ", " +
                     std::to_string(lb.aus) + "]");
  }
  if (lb.batch == 0) throw ShapeError(std::string(who) + ": empty batch");
}

bool valid_at(const LabelBatch& lb, std::size_t k) { return lb.valid.empty() || lb.valid[k] != 0; }

}  // namespace

template <typename T>
Var<T> loss_detection(Var<T> logits, const LabelBatch& lb, Reduction reduction) {
  check_label_shape("loss_detection", logits, lb);
  for (double p : lb.target) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("loss_detection: target " + std::to_string(p) + " outside [0,1]");
  }
  const T* x = logits.value().raw();
  double acc = 0;
  for (std::size_t k = 0; k < lb.target.size(); ++k) {
    if (!valid_at(lb, k)) continue;
    const double v = x[k], p = lb.target[k];
    acc += std::max(v, 0.0) - v * p + std::log1p(std::exp(-std::abs(v)));
  }
  const T norm = reduction == Reduction::mean ? T(1) / T(lb.batch) : T(1);
  const std::size_t il = logits.id;
  return logits.tape->record(OpKind::custom, Tensor<T>::scalar(static_cast<T>(acc * double(norm))), {logits},
                             [il, lb, norm](Tape<T>& t, const std::vector<T>& g) {
                               std::vector<T>& gx = t.grad_buffer(il);
                               const T* xv = t.value(il).raw();
                               for (std::size_t k = 0; k < lb.target.size(); ++k) {
                                 if (!valid_at(lb, k)) continue;
                                 const T sig = T(1) / (T(1) + std::exp(-xv[k]));
                                 gx[k] += g[0] * norm * (sig - static_cast<T>(lb.target[k]));
                               }
                             });
}

template <typename T>
Var<T> loss_intensity(Var<T> pred, const LabelBatch& lb, Reduction reduction) {
  check_label_shape("loss_intensity", pred, lb);
  const T* x = pred.value().raw();
  double acc = 0;
  for (std::size_t k = 0; k < lb.target.size(); ++k) {
    if (valid_at(lb, k)) acc += (double(x[k]) - lb.target[k]) * (double(x[k]) - lb.target[k]);
  }
  const T norm = reduction == Reduction::mean ? T(1) / T(lb.batch) : T(1);
  const std::size_t ip = pred.id;
  return pred.tape->record(OpKind::custom, Tensor<T>::scalar(static_cast<T>(acc * double(norm))), {pred},
                           [ip, lb, norm](Tape<T>& t, const std::vector<T>& g) {
                             std::vector<T>& gx = t.grad_buffer(ip);
                             const T* xv = t.value(ip).raw();
                             for (std::size_t k = 0; k < lb.target.size(); ++k) {
                               if (valid_at(lb, k)) gx[k] += g[0] * norm * T(2) * (xv[k] - static_cast<T>(lb.target[k]));
                             }
                           });
}

template <typename T>
Tensor<T> denormalize_intensity(const Tensor<T>& pred) {
  Tensor<T> out = pred;
  for (auto& v : out.data()) v = std::clamp(v * T(5), T(0), T(5));
  return out;
}

#define MAEFACE_INSTANTIATE_LOSSES(T)                                                                            \
  template PretrainTargets<T> raw_targets<T>(const Tensor<T>&);                                                  \
  template PretrainTargets<T> patch_normalize<T>(const Tensor<T>&, T);                                           \
  template Tensor<T> denormalize_patches<T>(const Tensor<T>&, const PretrainTargets<T>&);                        \
  template Var<T> loss_pretrain<T>(Var<T>, const PretrainTargets<T>&, std::span<const MaskPlan>, LossFlavor, Reduction); \
  template Var<T> loss_detection<T>(Var<T>, const LabelBatch&, Reduction);                                       \
  template Var<T> loss_intensity<T>(Var<T>, const LabelBatch&, Reduction);                                       \
  template Tensor<T> denormalize_intensity<T>(const Tensor<T>&);

MAEFACE_INSTANTIATE_LOSSES(float)
MAEFACE_INSTANTIATE_LOSSES(double)

}  // namespace maeface
