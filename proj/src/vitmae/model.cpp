#include "maeface/vitmae/model.hpp"

#include <algorithm>
#include <string>

#include "maeface/error.hpp"

namespace maeface {

template <typename T>
BoundModel<T>::BoundModel(Tape<T>& tape, const ModelWeights<T>& weights, Trainable mode)
    : tape_(&tape), config_(weights.config) {
  for (const auto& p : weights.params) {
    bool train = p.kind != ParamKind::fixed && mode != Trainable::none;
    if (mode == Trainable::head_only && is_encoder_param(p.name)) train = false;
    names_.push_back(p.name);
    vars_.push_back(tape.leaf(p.value, train));
  }
}

template <typename T>
BoundModel<T>::BoundModel(Tape<T>& tape, const ModelWeights<T>& layout, std::vector<Var<T>> vars)
    : tape_(&tape), config_(layout.config), vars_(std::move(vars)) {
  if (vars_.size() != layout.params.size()) throw ShapeError("BoundModel: one handle per parameter required");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].shape() != layout.params[i].value.shape()) {
      throw ShapeError("BoundModel: handle for " + layout.params[i].name + " has shape " + shape_str(vars_[i].shape()));
    }
    names_.push_back(layout.params[i].name);
  }
}

template <typename T>
Var<T> BoundModel<T>::param(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return vars_[i];
  }
  throw ConfigError("model has no parameter '" + std::string(name) + "'");
}

template <typename T>
std::vector<T> BoundModel<T>::grad(std::size_t i) const {
  const auto& g = tape_->grad(vars_[i]);
  if (g.empty()) return std::vector<T>(vars_[i].value().numel(), T(0));
  return g;
}

template <typename T>
std::vector<T> drop_path_factors(std::size_t batch, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("drop_path: rate must lie in [0, 1)");
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<T> f(batch);
  for (auto& x : f) x = keep(rng) ? static_cast<T>(1.0 / (1.0 - rate)) : T(0);
  return f;
}

template <typename T>
Var<T> drop_path(Var<T> x, const DropPath& dp) {
  if (!dp.active()) return x;
  const auto f = drop_path_factors<T>(x.shape()[0], dp.rate, *dp.rng);
  return sample_scale(x, std::span<const T>(f));
}

namespace {

template <typename T>
Var<T> block(BoundModel<T>& m, Var<T> x, const std::string& prefix, std::size_t heads, const DropPath& dp) {
  auto p = [&](const char* leaf) { return m.param(prefix + leaf); };
  Var<T> h = layer_norm(x, p("norm1.g"), p("norm1.b"));
  h = attention(linear(h, p("attn.qkv.w"), p("attn.qkv.b")), heads);
  h = linear(h, p("attn.proj.w"), p("attn.proj.b"));
  x = add(x, drop_path(h, dp));
  h = layer_norm(x, p("norm2.g"), p("norm2.b"));
  h = gelu(linear(h, p("mlp.fc1.w"), p("mlp.fc1.b")));
  h = linear(h, p("mlp.fc2.w"), p("mlp.fc2.b"));
  return add(x, drop_path(h, dp));
}

template <typename T>
void check_patches(const ModelConfig& c, const Shape& s) {
  if (s.size() != 3 || s[1] != c.num_patches() || s[2] != c.patch_dim()) {
    throw ShapeError("expected patches [B, " + std::to_string(c.num_patches()) + ", " + std::to_string(c.patch_dim()) +
                     "], got " + shape_str(s));
  }
}

std::vector<std::vector<std::size_t>> visible_lists(std::span<const MaskPlan> plans) {
  std::vector<std::vector<std::size_t>> idx;
  for (const auto& p : plans) idx.emplace_back(p.visible().begin(), p.visible().end());
  return idx;
}

}  // namespace

template <typename T>
Var<T> encoder_forward(BoundModel<T>& m, Var<T> patches, std::span<const MaskPlan> plans, const DropPath& dp) {
  const ModelConfig& c = m.config();
  check_patches<T>(c, patches.shape());
  Var<T> x = linear(patches, m.param("enc.patch.w"), m.param("enc.patch.b"));
  x = add(x, m.param("enc.pos"));
  if (!plans.empty()) {
    if (plans.size() != patches.shape()[0]) throw ShapeError("encoder_forward: one mask plan per batch item required");
    for (const auto& p : plans) {
      if (p.size() != c.num_patches()) throw ShapeError("encoder_forward: mask plan covers a different patch count");
    }
    x = gather_rows(x, visible_lists(plans));
  }
  for (std::size_t i = 0; i < c.enc_depth; ++i) x = block(m, x, "enc.blocks." + std::to_string(i) + ".", c.enc_heads, dp);
  return layer_norm(x, m.param("enc.norm.g"), m.param("enc.norm.b"));
}

template <typename T>
Var<T> decoder_forward(BoundModel<T>& m, Var<T> latent, std::span<const MaskPlan> plans, const DropPath& dp) {
  const ModelConfig& c = m.config();
  if (c.task != Task::pretrain) throw ConfigError("decoder_forward: model was built for task " + std::string(task_name(c.task)));
  const Shape& ls = latent.shape();
  if (ls.size() != 3 || ls[2] != c.enc_width || plans.size() != ls[0]) {
    throw ShapeError("decoder_forward: latent " + shape_str(ls) + " does not match " + std::to_string(plans.size()) +
                     " plans of width " + std::to_string(c.enc_width));
  }
  std::vector<std::vector<std::size_t>> perms;
  for (const auto& p : plans) {
    if (p.num_visible != ls[1]) throw ShapeError("decoder_forward: plan visible count differs from latent tokens");
    perms.push_back(p.permutation);
  }
  Var<T> y = linear(latent, m.param("dec.embed.w"), m.param("dec.embed.b"));
  y = unshuffle_tokens(y, m.param("dec.mask_token"), perms);
  y = add(y, m.param("dec.pos"));
  for (std::size_t i = 0; i < c.dec_depth; ++i) y = block(m, y, "dec.blocks." + std::to_string(i) + ".", c.dec_heads, dp);
  y = layer_norm(y, m.param("dec.norm.g"), m.param("dec.norm.b"));
  return linear(y, m.param("dec.pred.w"), m.param("dec.pred.b"));
}

template <typename T>
Var<T> classifier_forward(BoundModel<T>& m, Var<T> patches, const DropPath& dp) {
  if (m.config().task == Task::pretrain) throw ConfigError("classifier_forward: model has no task head (task = pretrain)");
  Var<T> x = encoder_forward(m, patches, {}, dp);
  x = reduce(Reduce::mean, x, std::size_t{1});
  x = layer_norm(x, m.param("head.norm.g"), m.param("head.norm.b"));
  return linear(x, m.param("head.w"), m.param("head.b"));
}

template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Shape s{items.size()};
  s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
  Tensor<T> out(s);
  const std::size_t per = items[0].numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items[0].shape()) throw ShapeError("stack: items differ in shape");
    std::copy(items[i].raw(), items[i].raw() + per, out.raw() + i * per);
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> unbatch(const Var<T>& v) {
  const Shape& s = v.shape();
  return v.value().reshaped(Shape(s.begin() + 1, s.end()));
}

}  // namespace

template <typename T>
Tensor<T> encode(const ModelWeights<T>& w, const Tensor<T>& patches, const MaskPlan& plan) {
  Tape<T> tape;
  BoundModel<T> m(tape, w, Trainable::none);
  Var<T> x = tape.constant(patches.reshaped(Shape{1, patches.dim(0), patches.dim(1)}));
  return unbatch(encoder_forward(m, x, std::span(&plan, 1)));
}

template <typename T>
Tensor<T> reconstruct(const ModelWeights<T>& w, const Tensor<T>& patches, const MaskPlan& plan) {
  Tape<T> tape;
  BoundModel<T> m(tape, w, Trainable::none);
  Var<T> x = tape.constant(patches.reshaped(Shape{1, patches.dim(0), patches.dim(1)}));
  const auto plans = std::span(&plan, 1);
  return unbatch(decoder_forward(m, encoder_forward(m, x, plans), plans));
}

template <typename T>
Tensor<T> classify(const ModelWeights<T>& w, const Tensor<T>& patches) {
  Tape<T> tape;
  BoundModel<T> m(tape, w, Trainable::none);
  Var<T> x = tape.constant(patches.reshaped(Shape{1, patches.dim(0), patches.dim(1)}));
  return unbatch(classifier_forward(m, x));
}

#define MAEFACE_INSTANTIATE_MODEL(T)                                                                 \
  template class BoundModel<T>;                                                                      \
  template std::vector<T> drop_path_factors<T>(std::size_t, double, std::mt19937_64&);               \
  template Var<T> drop_path<T>(Var<T>, const DropPath&);                                             \
  template Var<T> encoder_forward<T>(BoundModel<T>&, Var<T>, std::span<const MaskPlan>, const DropPath&); \
  template Var<T> decoder_forward<T>(BoundModel<T>&, Var<T>, std::span<const MaskPlan>, const DropPath&); \
  template Var<T> classifier_forward<T>(BoundModel<T>&, Var<T>, const DropPath&);                    \
  template Tensor<T> encode<T>(const ModelWeights<T>&, const Tensor<T>&, const MaskPlan&);           \
  template Tensor<T> reconstruct<T>(const ModelWeights<T>&, const Tensor<T>&, const MaskPlan&);      \
  template Tensor<T> classify<T>(const ModelWeights<T>&, const Tensor<T>&);                          \
  template Tensor<T> stack<T>(std::span<const Tensor<T>>);

MAEFACE_INSTANTIATE_MODEL(float)
MAEFACE_INSTANTIATE_MODEL(double)

}  // namespace maeface
