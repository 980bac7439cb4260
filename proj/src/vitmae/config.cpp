#include "maeface/vitmae/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "maeface/error.hpp"

namespace maeface {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::pretrain: return "pretrain";
    case Task::detect: return "detect";
    case Task::intensity: return "intensity";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  if (name == "pretrain") return Task::pretrain;
  if (name == "detect") return Task::detect;
  if (name == "intensity") return Task::intensity;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected pretrain, detect or intensity)");
}

ModelConfig ModelConfig::paper_preset() {
  ModelConfig c;
  c.image_size = 224;
  c.channels = 3;
  c.patch_size = 16;
  c.enc_depth = 12;
  c.enc_width = 768;
  c.enc_heads = 12;
  c.dec_depth = 8;
  c.dec_width = 512;
  c.dec_heads = 16;
  c.mlp_ratio = 4.0;
  c.num_aus = 12;
  c.mask_ratio = 0.75;
  c.norm_pix_target = true;
  return c;
}

ModelConfig ModelConfig::desk_preset() { return ModelConfig{}; }

std::size_t ModelConfig::enc_hidden() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(enc_width) * mlp_ratio));
}

std::size_t ModelConfig::dec_hidden() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(dec_width) * mlp_ratio));
}

std::size_t ModelConfig::num_visible() const {
  return static_cast<std::size_t>(std::floor(static_cast<double>(num_patches()) * (1.0 - mask_ratio)));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_size == 0 || patch_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (enc_width == 0 || enc_heads == 0 || enc_width % enc_heads != 0) fail("enc_width must be divisible by enc_heads");
  if (dec_width == 0 || dec_heads == 0 || dec_width % dec_heads != 0) fail("dec_width must be divisible by dec_heads");
  if (enc_width % 4 != 0 || dec_width % 4 != 0) fail("widths must be divisible by 4 for the 2-D sin-cos table");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
  if (num_aus < 1) fail("num_aus must be at least 1");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "image_size = " << image_size << '\n'
     << "channels = " << channels << '\n'
     << "patch_size = " << patch_size << '\n'
     << "enc_depth = " << enc_depth << '\n'
     << "enc_width = " << enc_width << '\n'
     << "enc_heads = " << enc_heads << '\n'
     << "dec_depth = " << dec_depth << '\n'
     << "dec_width = " << dec_width << '\n'
     << "dec_heads = " << dec_heads << '\n'
     << "mlp_ratio = " << mlp_ratio << '\n'
     << "num_aus = " << num_aus << '\n'
     << "mask_ratio = " << mask_ratio << '\n'
     << "norm_pix_target = " << (norm_pix_target ? "true" : "false") << '\n'
     << "task = " << task_name(task) << '\n';
  return os.str();
}

std::size_t kv_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double kv_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool kv_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[std::move(key)] = std::move(value);
  }
  return kv;
}

std::map<std::string, std::string> ModelConfig::apply(const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> rest;
  for (const auto& [k, v] : kv) {
    if (k == "image_size") image_size = kv_size(k, v);
    else if (k == "channels") channels = kv_size(k, v);
    else if (k == "patch_size") patch_size = kv_size(k, v);
    else if (k == "enc_depth") enc_depth = kv_size(k, v);
    else if (k == "enc_width") enc_width = kv_size(k, v);
    else if (k == "enc_heads") enc_heads = kv_size(k, v);
    else if (k == "dec_depth") dec_depth = kv_size(k, v);
    else if (k == "dec_width") dec_width = kv_size(k, v);
    else if (k == "dec_heads") dec_heads = kv_size(k, v);
    else if (k == "mlp_ratio") mlp_ratio = kv_double(k, v);
    else if (k == "num_aus") num_aus = kv_size(k, v);
    else if (k == "mask_ratio") mask_ratio = kv_double(k, v);
    else if (k == "norm_pix_target") norm_pix_target = kv_bool(k, v);
    else if (k == "task") task = parse_task(v);
    else rest[k] = v;
  }
  return rest;
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  auto rest = c.apply(parse_key_values(text));
  if (!rest.empty()) throw ConfigError("model config: unknown key '" + rest.begin()->first + "'");
  c.validate();
  return c;
}

}  // namespace maeface
