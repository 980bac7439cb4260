#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

namespace maeface {

enum class Task { pretrain, detect, intensity };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

// Geometry of the masked autoencoder and its task head.
struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t enc_depth = 4;
  std::size_t enc_width = 128;
  std::size_t enc_heads = 4;
  std::size_t dec_depth = 2;
  std::size_t dec_width = 64;
  std::size_t dec_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t num_aus = 4;
  double mask_ratio = 0.75;
  bool norm_pix_target = true;
  Task task = Task::pretrain;

  // ViT-Base encoder with the 8x512 decoder at 224px, 12 BP4D AUs.
  static ModelConfig paper_preset();
  // CPU-sized configuration used by tests and the synthetic corpus.
  static ModelConfig desk_preset();

  void validate() const;  // throws ConfigError

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t enc_hidden() const;
  std::size_t dec_hidden() const;
  std::size_t num_visible() const;

  // "key = value" lines, one per field.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  // Applies recognized keys, returns the ones it did not consume.
  std::map<std::string, std::string> apply(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

// Parses "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(std::string_view text);

// Typed value parsers for config files; throw ConfigError naming the key.
std::size_t kv_size(const std::string& key, const std::string& value);
double kv_double(const std::string& key, const std::string& value);
bool kv_bool(const std::string& key, const std::string& value);

}  // namespace maeface
