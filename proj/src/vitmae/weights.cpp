#include "maeface/vitmae/weights.hpp"

#include <cmath>
#include <random>

#include "maeface/error.hpp"
#include "maeface/rng.hpp"
#include "maeface/vitmae/patch.hpp"

namespace maeface {

std::string_view param_kind_name(ParamKind kind) {
  switch (kind) {
    case ParamKind::matrix: return "matrix";
    case ParamKind::vector: return "vector";
    case ParamKind::token: return "token";
    case ParamKind::fixed: return "fixed";
  }
  return "unknown";
}

template <typename T>
std::size_t ModelWeights<T>::index(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return i;
  }
  throw ConfigError("model has no parameter '" + std::string(name) + "'");
}

template <typename T>
bool ModelWeights<T>::contains(std::string_view name) const {
  for (const auto& p : params) {
    if (p.name == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ModelWeights<T>::numel() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

bool is_encoder_param(std::string_view name) { return name.starts_with("enc."); }

namespace {

void add_block(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t width, std::size_t hidden) {
  out.push_back({prefix + "norm1.g", ParamKind::vector, {width}});
  out.push_back({prefix + "norm1.b", ParamKind::vector, {width}});
  out.push_back({prefix + "attn.qkv.w", ParamKind::matrix, {width, 3 * width}});
  out.push_back({prefix + "attn.qkv.b", ParamKind::vector, {3 * width}});
  out.push_back({prefix + "attn.proj.w", ParamKind::matrix, {width, width}});
  out.push_back({prefix + "attn.proj.b", ParamKind::vector, {width}});
  out.push_back({prefix + "norm2.g", ParamKind::vector, {width}});
  out.push_back({prefix + "norm2.b", ParamKind::vector, {width}});
  out.push_back({prefix + "mlp.fc1.w", ParamKind::matrix, {width, hidden}});
  out.push_back({prefix + "mlp.fc1.b", ParamKind::vector, {hidden}});
  out.push_back({prefix + "mlp.fc2.w", ParamKind::matrix, {hidden, width}});
  out.push_back({prefix + "mlp.fc2.b", ParamKind::vector, {width}});
}

}  // namespace

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> s;
  const std::size_t n = c.num_patches(), pd = c.patch_dim();
  s.push_back({"enc.patch.w", ParamKind::matrix, {pd, c.enc_width}});
  s.push_back({"enc.patch.b", ParamKind::vector, {c.enc_width}});
  s.push_back({"enc.pos", ParamKind::fixed, {n, c.enc_width}});
  for (std::size_t i = 0; i < c.enc_depth; ++i) {
    add_block(s, "enc.blocks." + std::to_string(i) + ".", c.enc_width, c.enc_hidden());
  }
  s.push_back({"enc.norm.g", ParamKind::vector, {c.enc_width}});
  s.push_back({"enc.norm.b", ParamKind::vector, {c.enc_width}});
  if (c.task == Task::pretrain) {
    s.push_back({"dec.embed.w", ParamKind::matrix, {c.enc_width, c.dec_width}});
    s.push_back({"dec.embed.b", ParamKind::vector, {c.dec_width}});
    s.push_back({"dec.mask_token", ParamKind::token, {c.dec_width}});
    s.push_back({"dec.pos", ParamKind::fixed, {n, c.dec_width}});
    for (std::size_t i = 0; i < c.dec_depth; ++i) {
      add_block(s, "dec.blocks." + std::to_string(i) + ".", c.dec_width, c.dec_hidden());
    }
    s.push_back({"dec.norm.g", ParamKind::vector, {c.dec_width}});
    s.push_back({"dec.norm.b", ParamKind::vector, {c.dec_width}});
    s.push_back({"dec.pred.w", ParamKind::matrix, {c.dec_width, pd}});
    s.push_back({"dec.pred.b", ParamKind::vector, {pd}});
  } else {
    s.push_back({"head.norm.g", ParamKind::vector, {c.enc_width}});
    s.push_back({"head.norm.b", ParamKind::vector, {c.enc_width}});
    s.push_back({"head.w", ParamKind::matrix, {c.enc_width, c.num_aus}});
    s.push_back({"head.b", ParamKind::vector, {c.num_aus}});
  }
  return s;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
ModelWeights<T> init_weights(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights<T> w;
  w.config = config;
  const auto specs = param_specs(config);
  // One stream per parameter so adding a tensor never shifts the others.
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    Tensor<T> v(s.shape);
    auto rng = make_rng(seed, Stream::init, i);
    switch (s.kind) {
      case ParamKind::matrix: {
        const double b = xavier_bound(s.shape[0], s.shape[1]);
        std::uniform_real_distribution<double> u(-b, b);
        for (auto& x : v.data()) x = static_cast<T>(u(rng));
        break;
      }
      case ParamKind::vector:
        if (s.name.ends_with(".g")) v = Tensor<T>::ones(s.shape);
        break;
      case ParamKind::token: {
        std::normal_distribution<double> nd(0.0, 0.02);
        for (auto& x : v.data()) {
          double d;
          do d = nd(rng);
          while (std::abs(d) > 0.04);
          x = static_cast<T>(d);
        }
        break;
      }
      case ParamKind::fixed:
        v = pos_embed_sincos<T>(s.shape[0], s.shape[1]);
        break;
    }
    w.params.push_back({s.name, s.kind, std::move(v)});
  }
  return w;
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template ModelWeights<float> init_weights<float>(const ModelConfig&, std::uint64_t);
template ModelWeights<double> init_weights<double>(const ModelConfig&, std::uint64_t);

}  // namespace maeface
