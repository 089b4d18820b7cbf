#pragma once

// Nested channel dropout: with probability alpha a step keeps only the
// first c_keep channels (c_keep ~ U{1..c}) and zeroes the rest; otherwise the
// full latent is used. The adversarial weight follows a sigmoid in c_keep.

#include <cstddef>
#include <string>
#include <vector>

#include "cvq/quantizer.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

class Rng;

struct DropoutSchedule {
  double alpha = 0.25;  // dropout ratio
  double eta = 0.05;    // transition smoothness
  double lambda0 = 1.0; // base adversarial weight
  std::size_t channels = 16;

  void validate() const;
};

struct ChannelKeep {
  bool truncated = false;
  std::size_t c_keep = 0;  // == channels when not truncated

  std::string branch() const { return truncated ? "truncated" : "full"; }
};

ChannelKeep sample_c_keep(const DropoutSchedule& schedule, Rng& rng);

/// Prefix indicator of length c with ones on the first c_keep entries.
struct TruncationMask {
  std::size_t c_keep = 0;
  std::vector<double> mask;

  static TruncationMask prefix(std::size_t channels, std::size_t c_keep);
};

/// Zeroes channels beyond c_keep; gradients through them are zero.
LatentGrid apply_mask(const LatentGrid& z, const TruncationMask& mask);

/// lambda0 / (1 + exp(-eta * (c_keep - c / 2)))
double lambda_gan(std::size_t c_keep, const DropoutSchedule& schedule);

struct NestedLossResult {
  LossComponents loss;
  ChannelKeep keep;
  double lambda_gan = 0.0;
  std::vector<std::size_t> indices;  // codebook assignments of the active tokens
  ImageBatch reconstruction;         // unclamped
};

/// Loss for one channel configuration. Channel axis: the first c_keep channel
/// tokens are quantized and contribute quantization losses, the others are
/// zero going into the decoder. Patch axis is accepted only with
/// `vq_dropout_compat`, which zeroes channels beyond c_keep and then
/// patch-quantizes the padded latent.
NestedLossResult nested_loss(const ImageBatch& x, const LatentGrid& z, const Codebook& codebook,
                             const TruncationMask& mask, const DropoutSchedule& schedule,
                             const Autoencoder& model, double beta, const LossHooks& hooks = {},
                             bool vq_dropout_compat = false);

/// Loss with every channel active, adversarial weight lambda0.
NestedLossResult full_loss(const ImageBatch& x, const LatentGrid& z, const Codebook& codebook,
                           const DropoutSchedule& schedule, const Autoencoder& model, double beta,
                           const LossHooks& hooks = {});

/// One stochastic draw of the hybrid objective
///   alpha * E[L_nested(c_keep)] + (1 - alpha) * L_total.
NestedLossResult hybrid_step_loss(const ImageBatch& x, const Codebook& codebook, const DropoutSchedule& schedule,
                                  const Autoencoder& model, double beta, Rng& rng, const LossHooks& hooks = {},
                                  bool vq_dropout_compat = false);

}  // namespace cvq
