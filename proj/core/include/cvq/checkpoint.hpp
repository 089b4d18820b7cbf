#pragma once

// Checkpoint directories: one NTB file per parameter plus manifest.json with
// the shapes, the step count, the run config echo and a git-style content id
// per file. The manifest is written last.

#include <filesystem>
#include <string>

#include "cvq/car.hpp"
#include "cvq/config.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

void save_tokenizer_checkpoint(const std::filesystem::path& dir, const Autoencoder& model, const Codebook& codebook,
                               const RunConfig& config, std::size_t step);

struct TokenizerCheckpoint {
  RunConfig config;
  Autoencoder model;
  Codebook codebook;
  std::size_t step = 0;
};

TokenizerCheckpoint load_tokenizer_checkpoint(const std::filesystem::path& dir);

void save_car_checkpoint(const std::filesystem::path& dir, const CarModel& model, const RunConfig& config,
                         std::size_t step);

struct CarCheckpoint {
  RunConfig config;
  CarModel model;
  std::size_t step = 0;
};

CarCheckpoint load_car_checkpoint(const std::filesystem::path& dir);

/// Git blob id of the checkpoint manifest, which itself lists the ids of all
/// tensor files.
std::string checkpoint_content_id(const std::filesystem::path& dir);

}  // namespace cvq
