#include <doctest.h>

#include <cmath>

#include "cvq/error.hpp"
#include "cvq/metrics.hpp"
#include "oracles.hpp"

using namespace cvq;

TEST_CASE("psnr: cap, closed form and recomputation") {
  const std::vector<double> x = {0.2, 0.4, 0.6, 0.8};
  CHECK(psnr(x, x) == kPsnrCap);
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-15));
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto a = oracle::random_tensor({50}, rng, 0, 1).to_vector();
    const auto b = oracle::random_tensor({50}, rng, 0, 1).to_vector();
    CHECK(std::abs(psnr(a, b) - oracle::psnr_reference(a, b)) < 1e-9);
  }
  CHECK(psnr_from_mse(0.02) < psnr_from_mse(0.01));
  CHECK_THROWS_AS(psnr(x, std::vector<double>{0.1}), Error);
  CHECK_THROWS_AS(psnr(std::vector<double>{1.5}, std::vector<double>{0.5}), Error);
}

TEST_CASE("ssim of identical images is one and the formula is symmetric") {
  Rng rng(2);
  const ImageBatch x{oracle::random_tensor({2, 16, 16, 3}, rng, 0, 1)};
  const ImageBatch y{oracle::random_tensor({2, 16, 16, 3}, rng, 0, 1)};
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ssim(x, y) == ssim(y, x));
  CHECK(ssim(x, y) < 1.0);
}

TEST_CASE("ssim of two constant images has the single-window closed form") {
  const double a = 0.3, b = 0.7;
  const ImageBatch x{Tensor::full({1, 8, 8, 1}, a)}, y{Tensor::full({1, 8, 8, 1}, b)};
  const double c1 = 0.01 * 0.01;
  CHECK(ssim(x, y) == doctest::Approx((2 * a * b + c1) / (a * a + b * b + c1)).epsilon(1e-14));
}

TEST_CASE("ssim rejects windows larger than the image") {
  const ImageBatch x{Tensor::full({1, 4, 4, 1}, 0.5)};
  CHECK_THROWS_AS(ssim(x, x), Error);
  SsimOptions o;
  o.window = 4;
  CHECK(ssim(x, x, o) == 1.0);
}

TEST_CASE("batch metrics average per-image values") {
  const ImageBatch x{Tensor({2, 8, 8, 1}, std::vector<double>(128, 0.5))};
  std::vector<double> v(128, 0.5);
  for (std::size_t i = 64; i < 128; ++i) v[i] = 0.6;
  const ImageBatch y{Tensor({2, 8, 8, 1}, v)};
  const ImageMetrics m = batch_metrics(x, y);
  CHECK(m.mse == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(m.psnr == doctest::Approx((99.0 + 20.0) / 2.0).epsilon(1e-12));
}
