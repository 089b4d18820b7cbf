#pragma once

// Training loops for the tokenizer and the next-channel model, plus token
// extraction between them.
//
// Seed streams derived from the run seed:
//   1: batch order, 2: dropout draws, 3: tokenizer init, 4: codebook init,
//   5: transformer init.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvq/car.hpp"
#include "cvq/config.hpp"
#include "cvq/datasets.hpp"
#include "cvq/metrics.hpp"
#include "cvq/nested_dropout.hpp"
#include "cvq/optim.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/rng.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

enum SeedStream : std::uint64_t {
  kSeedBatches = 1,
  kSeedDropout = 2,
  kSeedTokenizerInit = 3,
  kSeedCodebookInit = 4,
  kSeedCarInit = 5,
};

/// Epoch-wise shuffled mini-batches; a trailing partial batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> ids, std::size_t batch, std::uint64_t seed);

  std::vector<std::size_t> next();
  std::size_t batch_size() const { return batch_; }
  std::size_t batches_per_epoch() const { return ids_.size() / batch_; }

 private:
  void shuffle();

  std::vector<std::size_t> ids_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

ImageBatch make_batch(const Dataset& data, std::span<const std::size_t> ids);

struct TokenizerStepLog {
  std::size_t step = 0;
  std::string branch;
  std::size_t c_keep = 0;
  double lambda_gan = 0.0;
  double total = 0.0;
  double reconstruction = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double perceptual = 0.0;
  double adversarial = 0.0;
  std::size_t batch_distinct = 0;
  double lifetime_utilization = 0.0;
  double window_utilization = 0.0;
};

class TokenizerTrainer {
 public:
  /// Builds the model, draws the first batch and initialises the codebook
  /// from its tokens.
  TokenizerTrainer(const RunConfig& config, const Dataset& data, LossHooks hooks = {});

  TokenizerStepLog step();

  const RunConfig& config() const { return config_; }
  Autoencoder& model() { return model_; }
  const Autoencoder& model() const { return model_; }
  Codebook& codebook() { return *codebook_; }
  const Codebook& codebook() const { return *codebook_; }
  std::size_t steps_done() const { return steps_; }
  /// Batches in the usage window (one epoch unless configured).
  std::size_t usage_window() const;

 private:
  RunConfig config_;
  const Dataset& data_;
  LossHooks hooks_;
  Autoencoder model_;
  BatchSampler sampler_;
  Rng dropout_rng_;
  std::optional<Codebook> codebook_;
  std::optional<Adam> optimizer_;
  std::vector<std::size_t> pending_;
  std::size_t steps_ = 0;
};

struct TokenizerEval {
  ImageMetrics metrics;      // on clamped reconstructions
  std::size_t distinct = 0;  // distinct codewords used over the pass
  double utilization = 0.0;
};

/// Quantized reconstruction of the given images, processed in chunks.
TokenizerEval evaluate_tokenizer(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                                 std::span<const std::size_t> ids, std::size_t chunk = 100);

/// Reconstruction MSE with only the first c_keep channel tokens kept.
double truncated_mse(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                     std::span<const std::size_t> ids, std::size_t c_keep, std::size_t chunk = 100);

/// Channel token sequences of the given images (channel axis only).
std::vector<TokenSequence> extract_tokens(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                                          std::span<const std::size_t> ids, std::size_t chunk = 100);

/// tokens.ntb [n, c], labels.ntb [n], codebook.ntb [N, h*w], manifest.json.
void write_token_set(const std::filesystem::path& dir, std::span<const TokenSequence> sequences,
                     const Codebook& codebook, const TokenGeometry& geometry);

struct TokenSet {
  TokenGeometry geometry;
  std::vector<TokenSequence> sequences;
  Tensor codebook;
};

TokenSet read_token_set(const std::filesystem::path& dir);

class CarTrainer {
 public:
  CarTrainer(const RunConfig& config, std::vector<TokenSequence> sequences, Tensor codebook);

  CarStepResult step();

  CarModel& model() { return model_; }
  const CarModel& model() const { return model_; }
  const Tensor& codebook() const { return codebook_; }
  std::size_t steps_done() const { return steps_; }

 private:
  RunConfig config_;
  std::vector<TokenSequence> sequences_;
  Tensor codebook_;
  CarModel model_;
  Adam optimizer_;
  BatchSampler sampler_;
  std::size_t steps_ = 0;
};

/// CSV header and row of the per-step tokenizer log.
std::string tokenizer_log_header();
std::string tokenizer_log_row(const TokenizerStepLog& log);

/// Fixed-format number for CSV output ("%.17g"), so logs replay bitwise.
std::string csv_number(double v);

}  // namespace cvq
