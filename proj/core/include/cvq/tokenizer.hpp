#pragma once

// Patch-MLP autoencoder mapping images [B, H, W, C] to latent grids
// [B, H/f, W/f, c] and back. Every f x f patch is flattened and sent through
// a linear stem and residual MLP blocks, so the latent keeps the spatial grid
// layout that both quantization axes need.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cvq/tensor.hpp"

namespace cvq {

class Rng;

/// Pixels in [0, 1], shape [B, H, W, C].
struct ImageBatch {
  Tensor pixels;

  std::size_t batch() const { return pixels.dim(0); }
  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
  std::size_t channels() const { return pixels.dim(3); }

  static ImageBatch from_pixels(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels,
                                std::vector<double> pixels);
};

/// Clamp to [0, 1]; used at evaluation time only.
ImageBatch clamp01(const ImageBatch& images);

/// Encoder output Z with shape [B, h, w, c].
///
/// The patch view lists the h*w spatial vectors of dimension c per image in
/// raster order; the channel view lists the c channel maps per image, each
/// flattened row-major to h*w values. One is a transpose of the other.
class LatentGrid {
 public:
  LatentGrid() = default;
  explicit LatentGrid(Tensor values);

  const Tensor& values() const { return values_; }
  std::size_t batch() const { return values_.dim(0); }
  std::size_t height() const { return values_.dim(1); }
  std::size_t width() const { return values_.dim(2); }
  std::size_t channels() const { return values_.dim(3); }
  std::size_t spatial() const { return height() * width(); }

  /// [B * h * w, c]
  Tensor patch_view() const;
  /// [B * c, h * w]
  Tensor channel_view() const;

  static LatentGrid from_patch_view(const Tensor& tokens, std::size_t batch, std::size_t height, std::size_t width);
  static LatentGrid from_channel_view(const Tensor& tokens, std::size_t batch, std::size_t height, std::size_t width);

 private:
  Tensor values_;
};

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double scale = 1.0);
  Tensor operator()(const Tensor& x) const;
};

/// x + W2 gelu(W1 layernorm(x))
struct ResidualBlock {
  Linear fc1, fc2;
  Tensor operator()(const Tensor& x) const;
};

struct AutoencoderConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t image_channels = 3;
  std::size_t patch = 8;  // downsample factor f
  std::size_t hidden = 64;
  std::size_t blocks = 1;
  std::size_t latent_channels = 16;

  std::size_t grid_height() const { return image_height / patch; }
  std::size_t grid_width() const { return image_width / patch; }
  std::size_t patch_dim() const { return patch * patch * image_channels; }
  void validate() const;
};

/// [B, H, W, C] -> [B * h * w, f * f * C]
Tensor patchify(const Tensor& images, std::size_t patch);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t batch, std::size_t height, std::size_t width,
                  std::size_t channels, std::size_t patch);

class Autoencoder {
 public:
  Autoencoder(const AutoencoderConfig& config, std::uint64_t seed);

  const AutoencoderConfig& config() const { return config_; }

  LatentGrid encode(const ImageBatch& images) const;
  /// Decoder output in patch layout [B * h * w, f * f * C], unclamped.
  Tensor decode_patches(const LatentGrid& latent) const;
  /// Unclamped reconstruction; see clamp01 for evaluation.
  ImageBatch decode(const LatentGrid& latent) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  Linear& encoder_head() { return enc_out_; }
  Linear& decoder_head() { return dec_out_; }

 private:
  AutoencoderConfig config_;
  Linear enc_in_, enc_out_, dec_in_, dec_out_;
  std::vector<ResidualBlock> enc_blocks_, dec_blocks_;
};

/// Pluggable image-level loss, e.g. a perceptual or adversarial term.
using ImageLossHook = std::function<Tensor(const Tensor& target, const Tensor& reconstruction)>;

struct LossHooks {
  ImageLossHook perceptual;   // unset: contributes 0
  ImageLossHook adversarial;  // unset: contributes 0
  double perceptual_weight = 1.0;
};

struct LossComponents {
  Tensor total;
  double reconstruction = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;  // already multiplied by beta
  double perceptual = 0.0;  // already weighted
  double adversarial = 0.0; // already weighted
};

/// mse(x, x_hat) + mse(sg[z], e) + beta * mse(z, sg[e])
///   + perceptual_weight * perceptual + adversarial_weight * adversarial.
/// `tokens` are the pre-quantization vectors and `selected` the codewords
/// chosen for them (gradients reach the codebook through `selected`).
LossComponents tokenizer_loss(const Tensor& x, const Tensor& x_hat, const Tensor& tokens, const Tensor& selected,
                              double beta, const LossHooks& hooks = {}, double adversarial_weight = 1.0);

}  // namespace cvq
