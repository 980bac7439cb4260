#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "maeface/data/image.hpp"
#include "maeface/train/config.hpp"
#include "maeface/vitmae/config.hpp"
#include "maeface/vitmae/mask.hpp"
#include "maeface/vitmae/weights.hpp"

namespace maeface {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Runs one subcommand; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

using KeyValues = std::map<std::string, std::string>;

// Model, optimizer and data settings of a training command, resolved from
// preset, then config file, then flags.
struct RunSettings {
  ModelConfig model;
  TrainConfig train;
  KeyValues data;  // manifest, eval_manifest, init, fraction, fold, folds, preset, dataset
  std::set<std::string> explicit_keys;

  std::string get(const std::string& key, const std::string& fallback = "") const;
  // Snapshot readable back through --config.
  std::string to_text() const;
};

inline constexpr int kConfigSchema = 1;

// Keys accepted in the data section.
const std::set<std::string>& data_keys();

// preset (desk|paper) -> file keys -> overrides; the seed is set last.
RunSettings resolve_settings(Task task, const KeyValues& file, const KeyValues& overrides, std::uint64_t seed);

// Reads "key = value" lines; ConfigError names the file on failure.
KeyValues read_config_file(const std::string& path);

// Creates `dir` (via a temporary sibling and a rename when it does not
// exist yet) and writes `dir/resolved.cfg` before any work starts.
void prepare_output_dir(const std::string& dir, const std::string& snapshot);

// Masked | reconstruction | original, each S x S, as an RGB image.
struct Triptych {
  Image image;
  MaskPlan plan;
  std::size_t panel = 0;  // side of one panel
};

inline constexpr std::uint8_t kMaskGray = 128;

// Masked patches are mid-gray in the left panel; the middle panel pastes
// visible patches from the original and decoder output elsewhere,
// de-normalized with the original patch moments when the model predicts
// normalized pixels. Throws DomainError for ratio outside [0, 1).
Triptych render_triptych(const ModelWeights<float>& weights, const Image& image, double mask_ratio, std::uint64_t seed);

// Patches of the left panel that are entirely mask gray.
std::size_t count_gray_patches(const Triptych& t);

}  // namespace maeface
