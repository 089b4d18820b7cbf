#pragma once

// Run configuration: every hyperparameter, seed and path of a run, stored as
// one flat JSON object. Unknown keys are rejected on load.

#include <cstdint>
#include <string>
#include <vector>

#include "cvq/car.hpp"
#include "cvq/datasets.hpp"
#include "cvq/nested_dropout.hpp"
#include "cvq/optim.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir = "runs/default";
  std::string data_dir = "data/desk";

  // corpus
  std::string corpus_kind = "mixed";
  std::size_t corpus_count = 5000;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t image_channels = 3;
  std::size_t classes = 10;

  // tokenizer
  std::string axis = "channel";
  std::size_t codebook_size = 256;
  std::size_t latent_channels = 16;
  std::size_t patch = 8;
  std::size_t hidden = 64;
  std::size_t blocks = 1;
  double beta = 0.25;
  double alpha = 0.25;
  double eta = 0.05;
  double lambda0 = 1.0;
  bool nested_dropout = true;
  bool vq_dropout_compat = false;
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double weight_decay = 1e-4;
  std::size_t steps = 5000;
  std::size_t batch_size = 32;
  std::size_t usage_window = 0;  // batches; 0 = one epoch

  // next-channel model
  std::size_t car_width = 128;
  std::size_t car_layers = 4;
  std::size_t car_heads = 4;
  std::size_t car_mlp_ratio = 4;
  bool car_index_embedding = false;
  double car_lr = 1e-3;
  double car_beta1 = 0.9;
  double car_beta2 = 0.96;
  double car_weight_decay = 1e-3;
  std::size_t car_steps = 3000;
  std::size_t car_batch_size = 32;
  double car_target_accuracy = 1.0;  // stop early once a step reaches it

  // sampling
  double temperature = 1.0;
  std::size_t top_k = 0;  // 0 = whole codebook
  std::size_t label = 0;
  std::size_t num_samples = 4;

  // analysis
  std::vector<std::size_t> sweep_channels;  // empty = 1..c
  std::vector<std::string> compare_axes = {"patch", "channel"};
  std::vector<std::size_t> compare_sizes = {64, 256, 512};
  std::size_t compare_eval_every = 100;
  std::size_t ablate_channel = 1;
  std::size_t ablate_image = 0;
  std::size_t eval_images = 0;  // 0 = whole validation split

  // inputs from earlier runs
  std::string tokenizer_checkpoint;
  std::string car_checkpoint;
  std::string tokens_dir;

  bool resume = false;  // reserved

  /// Canonical JSON text (sorted keys, two-space indent).
  std::string to_json() const;
  /// Parses a flat JSON object; keys missing from it keep their defaults.
  static RunConfig from_json(const std::string& text);

  /// Sets one field from its text form ("1e-4", "true", "64,256").
  void set(const std::string& key, const std::string& value);

  /// SHA-256 of the canonical JSON.
  std::string hash() const;

  void validate() const;

  AutoencoderConfig autoencoder() const;
  DropoutSchedule dropout() const;
  AdamConfig tokenizer_optimizer() const;
  AdamConfig car_optimizer() const;
  CarConfig car() const;
  SamplingConfig sampling() const;
  CorpusSpec corpus() const;
  Axis quant_axis() const { return parse_axis(axis); }

  bool operator==(const RunConfig&) const = default;
};

struct ConfigField {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every config key with its default in text form, in declaration order.
std::vector<ConfigField> config_fields();

}  // namespace cvq
