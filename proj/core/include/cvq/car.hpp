#pragma once

// Next-channel autoregressive model: a small decoder-only transformer over
// channel token sequences, conditioned on a class label.
//
// Input positions: 0 holds the label embedding, position k (1..c) the
// projected codeword of token x^(k); learned positional embeddings of length
// c + 1 are added to every position. Logits row k (0-based) predicts x^(k+1)
// from the label and x^(1..k).

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvq/optim.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/tensor.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

class Rng;

struct TokenGeometry {
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 16;
  std::size_t codebook_size = 64;
};

struct TokenSequence {
  std::vector<std::size_t> indices;  // length c, channel order
  std::size_t label = 0;

  void validate(const TokenGeometry& geometry) const;
};

struct CarConfig {
  TokenGeometry geometry;
  std::size_t classes = 10;
  std::size_t width = 128;  // model width d
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  /// Learned index-embedding table instead of the codeword projector.
  bool index_embedding = false;

  std::size_t token_dim() const { return geometry.height * geometry.width; }
  void validate() const;
};

struct LayerNormAffine {
  Tensor gain, bias;
  Tensor operator()(const Tensor& x) const;
};

struct TransformerBlock {
  LayerNormAffine ln1, ln2;
  Linear qkv, proj, fc1, fc2;
};

class CarModel {
 public:
  CarModel(const CarConfig& config, std::uint64_t seed);

  const CarConfig& config() const { return config_; }

  /// [c + 1, d] input embeddings for one sequence. `codebook` is [N, h*w].
  Tensor embed_sequence(const TokenSequence& seq, const Tensor& codebook) const;

  /// Teacher-forced logits [B * c, N]; rows of sequence b are b*c .. b*c+c-1.
  Tensor forward_logits(std::span<const TokenSequence> batch, const Tensor& codebook) const;
  Tensor forward_logits(const TokenSequence& seq, const Tensor& codebook) const;

  /// Logits [k+1, N] for the prefix label, x^(1..k): the last row predicts
  /// x^(k+1).
  Tensor prefix_logits(std::size_t label, std::span<const std::size_t> prefix, const Tensor& codebook) const;

  /// -log p(X) summed over the c conditionals.
  double sequence_nll(const TokenSequence& seq, const Tensor& codebook) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  Linear& head() { return head_; }
  Linear& projector_in() { return proj1_; }
  Linear& projector_out() { return proj2_; }

 private:
  Tensor embed(std::span<const std::size_t> labels, std::span<const std::size_t> tokens, std::size_t batch,
               std::size_t positions, const Tensor& codebook) const;
  Tensor run(const Tensor& x, std::size_t batch, std::size_t positions) const;

  CarConfig config_;
  Linear proj1_, proj2_;
  Tensor index_table_;
  Tensor label_table_;
  Tensor pos_emb_;
  std::vector<TransformerBlock> blocks_;
  LayerNormAffine ln_final_;
  Linear head_;
};

struct CarStepResult {
  double loss = 0.0;
  double accuracy = 0.0;  // teacher-forced next-token accuracy before the update
};

/// Mean next-token cross-entropy over all c positions of the batch, followed
/// by one optimizer update.
CarStepResult car_train_step(CarModel& model, Adam& optimizer, std::span<const TokenSequence> batch,
                             const Tensor& codebook);

/// Teacher-forced next-token accuracy without an update.
double car_accuracy(const CarModel& model, std::span<const TokenSequence> batch, const Tensor& codebook);

struct SamplingConfig {
  double temperature = 1.0;
  std::size_t top_k = 0;  // 0 means the whole codebook
  std::uint64_t seed = 0;
};

/// Samples c tokens left to right. top_k == 1 is greedy and deterministic.
TokenSequence generate(const CarModel& model, const Tensor& codebook, std::size_t label,
                       const SamplingConfig& sampling);

/// Decodes the first k channel tokens with the remaining channels zeroed.
ImageBatch progressive_decode(std::span<const std::size_t> tokens, std::size_t k, const Codebook& codebook,
                              const Autoencoder& decoder);

}  // namespace cvq
