#pragma once

// Checkpoint layout: a text header terminated by a line "end", followed by the
// tensors as row-major little-endian IEEE-754 doubles in header order.
//
//   ksoftmax-checkpoint 1
//   step <int>            epoch <int>      best_epoch <int>
//   epochs_since_best <int>
//   best_dev_ppl <hex float>
//   encoder <n> <d_e>
//   rng <engine state>
//   config <line count>   followed by that many config lines
//   tensor <name> <rows> <cols>   (one per tensor: model, adam_m.*, adam_v.*)
//   end

#include <filesystem>
#include <string>

#include "ksoftmax/training.hpp"

namespace ksoftmax {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  std::string config_text;  // the effective experiment config, verbatim
};

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const std::string& config_text);

/// Throws Io on a missing file, malformed header or truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ksoftmax
