#include "cvq/nested_dropout.hpp"

#include <cmath>

#include "cvq/error.hpp"
#include "cvq/rng.hpp"

namespace cvq {

void DropoutSchedule::validate() const {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::Config, "dropout ratio alpha must lie in [0, 1]");
  require(eta > 0.0, ErrorKind::Config, "eta must be positive");
  require(lambda0 >= 0.0, ErrorKind::Config, "lambda0 must be non-negative");
  require(channels >= 1, ErrorKind::Config, "channel count must be positive");
}

ChannelKeep sample_c_keep(const DropoutSchedule& schedule, Rng& rng) {
  schedule.validate();
  // Both draws are always taken so the stream position does not depend on
  // the branch.
  const double u = rng.uniform();
  const auto k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.channels)));
  if (u < schedule.alpha) return {true, k};
  return {false, schedule.channels};
}

TruncationMask TruncationMask::prefix(std::size_t channels, std::size_t c_keep) {
  require(c_keep >= 1 && c_keep <= channels, ErrorKind::Value,
          "c_keep " + std::to_string(c_keep) + " outside [1, " + std::to_string(channels) + "]");
  TruncationMask m;
  m.c_keep = c_keep;
  m.mask.assign(channels, 0.0);
  for (std::size_t k = 0; k < c_keep; ++k) m.mask[k] = 1.0;
  return m;
}

LatentGrid apply_mask(const LatentGrid& z, const TruncationMask& mask) {
  require(mask.mask.size() == z.channels(), ErrorKind::Shape,
          "mask length " + std::to_string(mask.mask.size()) + " != latent channels " + std::to_string(z.channels()));
  if (mask.c_keep == z.channels()) return z;
  const Tensor m = expand(Tensor({mask.mask.size()}, mask.mask), z.values().shape());
  return LatentGrid(z.values() * m);
}

double lambda_gan(std::size_t c_keep, const DropoutSchedule& schedule) {
  require(c_keep >= 1 && c_keep <= schedule.channels, ErrorKind::Value, "c_keep outside [1, c]");
  const double centre = static_cast<double>(schedule.channels) / 2.0;
  return schedule.lambda0 / (1.0 + std::exp(-schedule.eta * (static_cast<double>(c_keep) - centre)));
}

namespace {

NestedLossResult finish(const ImageBatch& x, const Tensor& x_hat_patches, const QuantizationResult& q,
                        const Autoencoder& model, double beta, const LossHooks& hooks, double adv_weight) {
  const auto& cfg = model.config();
  NestedLossResult r;
  r.reconstruction = ImageBatch{unpatchify(x_hat_patches, x.batch(), cfg.image_height, cfg.image_width,
                                           cfg.image_channels, cfg.patch)};
  r.loss = tokenizer_loss(x.pixels, r.reconstruction.pixels, q.tokens, q.selected, beta, hooks, adv_weight);
  r.indices = q.indices;
  return r;
}

}  // namespace

NestedLossResult nested_loss(const ImageBatch& x, const LatentGrid& z, const Codebook& codebook,
                             const TruncationMask& mask, const DropoutSchedule& schedule,
                             const Autoencoder& model, double beta, const LossHooks& hooks,
                             bool vq_dropout_compat) {
  const std::size_t B = z.batch(), c = z.channels(), hw = z.spatial(), ck = mask.c_keep;
  require(mask.mask.size() == c && schedule.channels == c, ErrorKind::Shape, "mask/schedule do not match latent channels");
  const double lam = lambda_gan(ck, schedule);
  NestedLossResult r;
  if (codebook.axis() == Axis::Patch) {
    require(ck == c || vq_dropout_compat, ErrorKind::Value,
            "nested channel truncation is defined for the channel axis; use the VQ dropout compatibility mode "
            "to truncate before patch quantization");
    const QuantizationResult q = quantize_patchwise(apply_mask(z, mask), codebook);
    r = finish(x, model.decode_patches(q.zq), q, model, beta, hooks, lam);
  } else {
    const Tensor tokens = z.channel_view();
    const Tensor active = ck == c ? tokens : reshape(slice(reshape(tokens, {B, c, hw}), 1, 0, ck), {B * ck, hw});
    const QuantizationResult q = quantize_tokens(active, codebook);
    Tensor zq = ste_wrap(q.tokens, q.selected);
    if (ck < c) {
      zq = concat({reshape(zq, {B, ck, hw}), Tensor::zeros({B, c - ck, hw})}, 1);
      zq = reshape(zq, {B * c, hw});
    }
    const LatentGrid grid = apply_mask(LatentGrid::from_channel_view(zq, B, z.height(), z.width()), mask);
    r = finish(x, model.decode_patches(grid), q, model, beta, hooks, lam);
  }
  r.keep = {ck < c, ck};
  r.lambda_gan = lam;
  return r;
}

NestedLossResult full_loss(const ImageBatch& x, const LatentGrid& z, const Codebook& codebook,
                           const DropoutSchedule& schedule, const Autoencoder& model, double beta,
                           const LossHooks& hooks) {
  const QuantizationResult q = quantize(z, codebook);
  NestedLossResult r = finish(x, model.decode_patches(q.zq), q, model, beta, hooks, schedule.lambda0);
  r.keep = {false, z.channels()};
  r.lambda_gan = schedule.lambda0;
  return r;
}

NestedLossResult hybrid_step_loss(const ImageBatch& x, const Codebook& codebook, const DropoutSchedule& schedule,
                                  const Autoencoder& model, double beta, Rng& rng, const LossHooks& hooks,
                                  bool vq_dropout_compat) {
  const ChannelKeep keep = sample_c_keep(schedule, rng);
  const LatentGrid z = model.encode(x);
  if (!keep.truncated) return full_loss(x, z, codebook, schedule, model, beta, hooks);
  return nested_loss(x, z, codebook, TruncationMask::prefix(schedule.channels, keep.c_keep), schedule, model, beta,
                     hooks, vq_dropout_compat);
}

}  // namespace cvq
