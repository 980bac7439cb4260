#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "maeface/ndgrad/tensor.hpp"
#include "maeface/vitmae/config.hpp"

namespace maeface {

// matrix: decayed, Xavier-initialized; vector: biases and norm affine;
// token: the learned mask token; fixed: sin-cos tables, never trained.
enum class ParamKind : std::uint8_t { matrix = 0, vector = 1, token = 2, fixed = 3 };

std::string_view param_kind_name(ParamKind kind);

template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::matrix;
  Tensor<T> value;
};

// Parameter set in a fixed, config-determined order. Names are dotted paths
// ("enc.blocks.0.attn.qkv.w"); "enc." entries form the encoder subset.
template <typename T>
struct ModelWeights {
  ModelConfig config;
  std::vector<Parameter<T>> params;

  // Throws ConfigError for unknown names.
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  Tensor<T>& at(std::string_view name) { return params[index(name)].value; }
  const Tensor<T>& at(std::string_view name) const { return params[index(name)].value; }
  std::size_t numel() const;

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out;
    out.config = config;
    for (const auto& p : params) out.params.push_back({p.name, p.kind, p.value.template cast<U>()});
    return out;
  }
};

bool is_encoder_param(std::string_view name);

// Name, kind and shape of every parameter, in storage order.
struct ParamSpec {
  std::string name;
  ParamKind kind;
  Shape shape;
};
std::vector<ParamSpec> param_specs(const ModelConfig& config);

// Xavier-uniform matrices, zero biases, unit norm gains, mask token from a
// normal(0, 0.02) truncated at two standard deviations.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& config, std::uint64_t seed);

double xavier_bound(std::size_t fan_in, std::size_t fan_out);

}  // namespace maeface
