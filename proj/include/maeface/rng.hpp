#pragma once

#include <cstdint>
#include <random>

namespace maeface {

// One independent generator per concern, derived from the run seed and up
// to two counters (typically step and sample index). Deriving instead of
// carrying generator state makes resumed runs replay the same draws.
enum class Stream : std::uint32_t {
  init = 1,
  mask = 2,
  augment = 3,
  mixup = 4,
  shuffle = 5,
  drop_path = 6,
  synth = 7,
  kfold = 8,
  eval = 9,
};

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0);

// Uniform in [0, 1).
double uniform01(std::mt19937_64& rng);

// Beta(alpha, alpha) via two gamma draws.
double sample_beta(std::mt19937_64& rng, double alpha);

}  // namespace maeface
