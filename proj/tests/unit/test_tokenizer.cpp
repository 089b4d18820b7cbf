#include <doctest.h>

#include "cvq/error.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/tokenizer.hpp"
#include "oracles.hpp"

using namespace cvq;

namespace {

AutoencoderConfig tiny() {
  AutoencoderConfig c;
  c.image_height = 4;
  c.image_width = 4;
  c.image_channels = 1;
  c.patch = 2;
  c.hidden = 5;
  c.blocks = 1;
  c.latent_channels = 3;
  return c;
}

ImageBatch random_images(std::size_t B, const AutoencoderConfig& c, Rng& rng) {
  return ImageBatch{oracle::random_tensor({B, c.image_height, c.image_width, c.image_channels}, rng, 0.0, 1.0)};
}

}  // namespace

TEST_CASE("patchify groups f x f blocks in raster order and unpatchify inverts it") {
  std::vector<double> v(2 * 4 * 6 * 3);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const Tensor img({2, 4, 6, 3}, v);
  const Tensor p = patchify(img, 2);
  CHECK(p.shape() == Shape{12, 12});
  // patch (b=1, py=1, px=2), in-patch (dy=1, dx=0), channel 2
  const std::size_t row = (1 * 2 + 1) * 3 + 2, col = (1 * 2 + 0) * 3 + 2;
  CHECK(p[row * 12 + col] == img[((1 * 4 + 3) * 6 + 4) * 3 + 2]);
  CHECK(unpatchify(p, 2, 4, 6, 3, 2).to_vector() == v);
}

TEST_CASE("encoder and decoder shapes follow the grid geometry") {
  Rng rng(1);
  const AutoencoderConfig c;
  const Autoencoder ae(c, 7);
  const ImageBatch x = random_images(2, c, rng);
  const LatentGrid z = ae.encode(x);
  CHECK(z.values().shape() == Shape{2, 4, 4, 16});
  CHECK(ae.decode(z).pixels.shape() == x.pixels.shape());
  CHECK(ae.decode_patches(z).shape() == Shape{32, 192});
}

TEST_CASE("same seed gives identical parameters, different seeds do not") {
  const Autoencoder a(tiny(), 3), b(tiny(), 3), c(tiny(), 4);
  CHECK(a.parameters()[0].to_vector() == b.parameters()[0].to_vector());
  CHECK(a.parameters()[0].to_vector() != c.parameters()[0].to_vector());
}

TEST_CASE("end-to-end autoencoder gradients match finite differences") {
  Rng rng(2);
  const AutoencoderConfig cfg = tiny();
  const Autoencoder ae(cfg, 5);
  const ImageBatch x = random_images(2, cfg, rng);
  auto loss = [&] { return mse(ae.decode(ae.encode(x)).pixels, x.pixels); };
  CHECK(oracle::param_gradcheck(loss, ae.parameters()) < 1e-3);
  auto wrt_input = [&](const std::vector<Tensor>& in) {
    return mse(ae.decode(ae.encode(ImageBatch{in[0]})).pixels, x.pixels);
  };
  CHECK(oracle::gradcheck(wrt_input, {x.pixels}, 1) < 1e-3);
}

TEST_CASE("loss components: commitment is scaled by beta, hooks add weighted terms") {
  Rng rng(3);
  const Tensor x = oracle::random_tensor({2, 3}, rng), xh = oracle::random_tensor({2, 3}, rng);
  const Tensor t = oracle::random_tensor({4, 2}, rng), e = oracle::random_tensor({4, 2}, rng);
  const LossComponents base = tokenizer_loss(x, xh, t, e, 0.25);
  const double m = mse(t, e).item();
  CHECK(base.codebook == doctest::Approx(m).epsilon(1e-15));
  CHECK(base.commitment == doctest::Approx(0.25 * m).epsilon(1e-15));
  CHECK(base.total.item() == doctest::Approx(base.reconstruction + 1.25 * m).epsilon(1e-14));
  LossHooks hooks;
  hooks.perceptual = [](const Tensor&, const Tensor&) { return Tensor::scalar(2.0); };
  hooks.perceptual_weight = 0.5;
  hooks.adversarial = [](const Tensor&, const Tensor&) { return Tensor::scalar(3.0); };
  const LossComponents hooked = tokenizer_loss(x, xh, t, e, 0.25, hooks, 0.1);
  CHECK(hooked.perceptual == 1.0);
  CHECK(hooked.adversarial == doctest::Approx(0.3));
  CHECK(hooked.total.item() == doctest::Approx(base.total.item() + 1.3));
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(ImageBatch::from_pixels(1, 1, 1, 1, {1.5}), Error);
  AutoencoderConfig bad = tiny();
  bad.patch = 3;
  CHECK_THROWS_AS(Autoencoder(bad, 0), Error);
  const Autoencoder ae(tiny(), 0);
  Rng rng(4);
  AutoencoderConfig other = tiny();
  other.image_height = 6;
  CHECK_THROWS_AS(ae.encode(random_images(1, other, rng)), Error);
  CHECK(clamp01(ImageBatch{Tensor({1, 1, 1, 2}, {-0.5, 1.5})}).pixels.to_vector() == std::vector<double>{0.0, 1.0});
}
