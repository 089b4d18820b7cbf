#include "cvq/tokenizer.hpp"

#include <algorithm>
#include <cmath>

#include "cvq/error.hpp"
#include "cvq/rng.hpp"

namespace cvq {

ImageBatch ImageBatch::from_pixels(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels,
                                   std::vector<double> pixels) {
  for (double v : pixels) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::Value, "pixel values must lie in [0, 1]");
  }
  return ImageBatch{Tensor({batch, height, width, channels}, std::move(pixels))};
}

ImageBatch clamp01(const ImageBatch& images) {
  auto v = images.pixels.to_vector();
  for (double& p : v) p = std::clamp(p, 0.0, 1.0);
  return ImageBatch{Tensor(images.pixels.shape(), std::move(v))};
}

// ---------------------------------------------------------------- LatentGrid

LatentGrid::LatentGrid(Tensor values) : values_(std::move(values)) {
  require(values_.rank() == 4, ErrorKind::Shape, "latent grid must be [B, h, w, c], got " + shape_str(values_.shape()));
}

Tensor LatentGrid::patch_view() const { return reshape(values_, {batch() * spatial(), channels()}); }

Tensor LatentGrid::channel_view() const {
  const Tensor per_image = reshape(values_, {batch(), spatial(), channels()});
  return reshape(permute(per_image, {0, 2, 1}), {batch() * channels(), spatial()});
}

LatentGrid LatentGrid::from_patch_view(const Tensor& tokens, std::size_t batch, std::size_t height, std::size_t width) {
  require(tokens.rank() == 2 && tokens.dim(0) == batch * height * width, ErrorKind::Shape,
          "patch tokens " + shape_str(tokens.shape()) + " do not match the grid");
  return LatentGrid(reshape(tokens, {batch, height, width, tokens.dim(1)}));
}

LatentGrid LatentGrid::from_channel_view(const Tensor& tokens, std::size_t batch, std::size_t height,
                                         std::size_t width) {
  require(tokens.rank() == 2 && tokens.dim(1) == height * width && tokens.dim(0) % batch == 0, ErrorKind::Shape,
          "channel tokens " + shape_str(tokens.shape()) + " do not match the grid");
  const std::size_t c = tokens.dim(0) / batch;
  const Tensor per_image = reshape(tokens, {batch, c, height * width});
  return LatentGrid(reshape(permute(per_image, {0, 2, 1}), {batch, height, width, c}));
}

// ---------------------------------------------------------------- layers

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double scale) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  for (double& v : b) v = rng.uniform(-bound, bound);
  weight = Tensor({in, out}, std::move(w), true);
  bias = Tensor({out}, std::move(b), true);
}

Tensor Linear::operator()(const Tensor& x) const {
  const Tensor y = matmul(x, weight);
  return y + expand(bias, y.shape());
}

Tensor ResidualBlock::operator()(const Tensor& x) const { return x + fc2(gelu(fc1(layernorm(x)))); }

// ---------------------------------------------------------------- Autoencoder

void AutoencoderConfig::validate() const {
  require(patch > 0 && image_height % patch == 0 && image_width % patch == 0, ErrorKind::Config,
          "image size must be divisible by the patch size");
  require(image_channels == 1 || image_channels == 3, ErrorKind::Config, "image channels must be 1 or 3");
  require(hidden > 0 && latent_channels > 0, ErrorKind::Config, "hidden width and latent channels must be positive");
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  require(images.rank() == 4, ErrorKind::Shape, "patchify expects [B, H, W, C]");
  const std::size_t B = images.dim(0), H = images.dim(1), W = images.dim(2), C = images.dim(3);
  require(H % patch == 0 && W % patch == 0, ErrorKind::Shape,
          "image " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch " + std::to_string(patch));
  const std::size_t h = H / patch, w = W / patch;
  const Tensor split = reshape(images, {B, h, patch, w, patch, C});
  return reshape(permute(split, {0, 1, 3, 2, 4, 5}), {B * h * w, patch * patch * C});
}

Tensor unpatchify(const Tensor& patches, std::size_t batch, std::size_t height, std::size_t width,
                  std::size_t channels, std::size_t patch) {
  const std::size_t h = height / patch, w = width / patch;
  const Tensor split = reshape(patches, {batch, h, w, patch, patch, channels});
  return reshape(permute(split, {0, 1, 3, 2, 4, 5}), {batch, height, width, channels});
}

Autoencoder::Autoencoder(const AutoencoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t P = config_.patch_dim(), D = config_.hidden, c = config_.latent_channels;
  enc_in_ = Linear(P, D, rng);
  for (std::size_t i = 0; i < config_.blocks; ++i) enc_blocks_.push_back({Linear(D, D, rng), Linear(D, D, rng)});
  enc_out_ = Linear(D, c, rng);
  dec_in_ = Linear(c, D, rng);
  for (std::size_t i = 0; i < config_.blocks; ++i) dec_blocks_.push_back({Linear(D, D, rng), Linear(D, D, rng)});
  dec_out_ = Linear(D, P, rng);
  std::fill(dec_out_.bias.mutable_data().begin(), dec_out_.bias.mutable_data().end(), 0.0);
}

LatentGrid Autoencoder::encode(const ImageBatch& images) const {
  require(images.height() == config_.image_height && images.width() == config_.image_width &&
              images.channels() == config_.image_channels,
          ErrorKind::Shape, "image batch " + shape_str(images.pixels.shape()) + " does not match the autoencoder");
  Tensor x = enc_in_(patchify(images.pixels, config_.patch));
  for (const auto& blk : enc_blocks_) x = blk(x);
  x = enc_out_(layernorm(x));
  return LatentGrid::from_patch_view(x, images.batch(), config_.grid_height(), config_.grid_width());
}

Tensor Autoencoder::decode_patches(const LatentGrid& latent) const {
  require(latent.height() == config_.grid_height() && latent.width() == config_.grid_width() &&
              latent.channels() == config_.latent_channels,
          ErrorKind::Shape, "latent " + shape_str(latent.values().shape()) + " does not match the autoencoder");
  Tensor x = dec_in_(latent.patch_view());
  for (const auto& blk : dec_blocks_) x = blk(x);
  return dec_out_(layernorm(x));
}

ImageBatch Autoencoder::decode(const LatentGrid& latent) const {
  return ImageBatch{unpatchify(decode_patches(latent), latent.batch(), config_.image_height, config_.image_width,
                               config_.image_channels, config_.patch)};
}

std::vector<std::pair<std::string, Tensor>> Autoencoder::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add = [&out](const std::string& name, const Linear& l) {
    out.emplace_back(name + ".weight", l.weight);
    out.emplace_back(name + ".bias", l.bias);
  };
  add("encoder.in", enc_in_);
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
    add("encoder.block" + std::to_string(i) + ".fc1", enc_blocks_[i].fc1);
    add("encoder.block" + std::to_string(i) + ".fc2", enc_blocks_[i].fc2);
  }
  add("encoder.out", enc_out_);
  add("decoder.in", dec_in_);
  for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
    add("decoder.block" + std::to_string(i) + ".fc1", dec_blocks_[i].fc1);
    add("decoder.block" + std::to_string(i) + ".fc2", dec_blocks_[i].fc2);
  }
  add("decoder.out", dec_out_);
  return out;
}

std::vector<Tensor> Autoencoder::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------- losses

LossComponents tokenizer_loss(const Tensor& x, const Tensor& x_hat, const Tensor& tokens, const Tensor& selected,
                              double beta, const LossHooks& hooks, double adversarial_weight) {
  require(beta >= 0.0, ErrorKind::Value, "commitment weight beta must be non-negative");
  require(x.shape() == x_hat.shape(), ErrorKind::Shape, "reconstruction shape mismatch");
  require(tokens.shape() == selected.shape(), ErrorKind::Shape, "token/codeword shape mismatch");
  LossComponents out;
  const Tensor recon = mse(x, x_hat);
  const Tensor cb = mse(stop_gradient(tokens), selected);
  const Tensor commit = mse(tokens, stop_gradient(selected)) * beta;
  Tensor total = recon + cb + commit;
  out.reconstruction = recon.item();
  out.codebook = cb.item();
  out.commitment = commit.item();
  if (hooks.perceptual) {
    const Tensor p = hooks.perceptual(x, x_hat) * hooks.perceptual_weight;
    out.perceptual = p.item();
    total = total + p;
  }
  if (hooks.adversarial) {
    const Tensor a = hooks.adversarial(x, x_hat) * adversarial_weight;
    out.adversarial = a.item();
    total = total + a;
  }
  out.total = total;
  return out;
}

}  // namespace cvq
