#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "maeface/cli/cli.hpp"
#include "maeface/error.hpp"

namespace fs = std::filesystem;

namespace maeface {

const std::set<std::string>& data_keys() {
  static const std::set<std::string> keys{"preset",  "manifest", "eval_manifest", "init",  "fraction",
                                          "fold",    "folds",    "dataset",       "schema"};
  return keys;
}

std::string RunSettings::get(const std::string& key, const std::string& fallback) const {
  const auto it = data.find(key);
  return it == data.end() ? fallback : it->second;
}

std::string RunSettings::to_text() const {
  std::ostringstream os;
  os << "# maeface run configuration\n"
     << "schema = " << kConfigSchema << "\n\n# model\n"
     << model.to_text() << "\n# training\n";
  // task already appears in the model section
  std::istringstream train_lines(train.to_text());
  for (std::string line; std::getline(train_lines, line);) {
    if (line.rfind("task =", 0) != 0) os << line << '\n';
  }
  os << "\n# data\n";
  for (const auto& [k, v] : data) {
    if (k != "schema") os << k << " = " << v << '\n';
  }
  return os.str();
}

KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return parse_key_values(os.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunSettings resolve_settings(Task task, const KeyValues& file, const KeyValues& overrides, std::uint64_t seed) {
  KeyValues kv = file;
  for (const auto& [k, v] : overrides) kv[k] = v;
  if (auto it = kv.find("schema"); it != kv.end() && it->second != std::to_string(kConfigSchema)) {
    throw ConfigError("config schema " + it->second + " is not supported (expected " + std::to_string(kConfigSchema) + ")");
  }
  if (auto it = kv.find("task"); it != kv.end() && parse_task(it->second) != task) {
    throw ConfigError("config task '" + it->second + "' conflicts with the command (" + std::string(task_name(task)) + ")");
  }
  RunSettings s;
  const std::string preset = kv.count("preset") ? kv.at("preset") : "desk";
  const std::string dataset = kv.count("dataset") ? kv.at("dataset") : "BP4D";
  if (preset == "desk") {
    s.model = ModelConfig::desk_preset();
    s.train = task == Task::pretrain ? TrainConfig::desk_pretrain() : TrainConfig::desk_finetune(task);
  } else if (preset == "paper") {
    s.model = ModelConfig::paper_preset();
    s.train = task == Task::pretrain ? TrainConfig::paper_pretrain() : TrainConfig::paper_finetune(task, dataset);
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
  }
  s.model.task = task;
  s.data["preset"] = preset;
  for (const auto& [k, v] : kv) s.explicit_keys.insert(k);
  auto rest = s.model.apply(kv);
  rest = s.train.apply(rest);
  for (const auto& [k, v] : rest) {
    if (!data_keys().count(k)) throw ConfigError("unknown configuration key '" + k + "'");
    s.data[k] = v;
  }
  s.model.task = task;
  s.train.task = task;
  s.train.seed = seed;
  s.model.validate();
  s.train.validate();
  return s;
}

void prepare_output_dir(const std::string& dir, const std::string& snapshot) {
  const fs::path target(dir);
  auto write_snapshot = [&](const fs::path& d) {
    const fs::path tmp = d / "resolved.cfg.tmp";
    {
      std::ofstream out(tmp);
      out << snapshot;
      if (!out) throw DataError("cannot write " + tmp.string());
    }
    fs::rename(tmp, d / "resolved.cfg");
  };
  if (fs::exists(target)) {
    if (!fs::is_directory(target)) throw ConfigError(dir + " exists and is not a directory");
    write_snapshot(target);
    return;
  }
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path staging = target.string() + ".partial-" + std::to_string(::getpid());
  fs::remove_all(staging);
  fs::create_directory(staging);
  write_snapshot(staging);
  fs::rename(staging, target);
}

}  // namespace maeface
