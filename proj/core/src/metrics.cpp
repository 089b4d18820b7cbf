#include "cvq/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "cvq/error.hpp"

namespace cvq {

namespace {

void check_unit(std::span<const double> v, const char* what) {
  for (double p : v) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::Value, std::string(what) + " has values outside [0, 1]");
  }
}

ImageBatch single(const ImageBatch& b, std::size_t i) {
  const std::size_t n = b.height() * b.width() * b.channels();
  const auto d = b.pixels.data().subspan(i * n, n);
  return ImageBatch{Tensor({1, b.height(), b.width(), b.channels()}, std::vector<double>(d.begin(), d.end()))};
}

}  // namespace

double mean_squared_error(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Shape, "metric inputs differ in size");
  require(!x.empty(), ErrorKind::Shape, "metric inputs are empty");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

double psnr_from_mse(double mse) {
  require(mse >= 0.0 && std::isfinite(mse), ErrorKind::Value, "mse must be finite and non-negative");
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Shape, "psnr inputs differ in size");
  check_unit(x, "psnr input");
  check_unit(y, "psnr input");
  return psnr_from_mse(mean_squared_error(x, y));
}

double ssim(const ImageBatch& x, const ImageBatch& y, const SsimOptions& o) {
  require(x.pixels.shape() == y.pixels.shape(), ErrorKind::Shape,
          "ssim shape mismatch " + shape_str(x.pixels.shape()) + " vs " + shape_str(y.pixels.shape()));
  const std::size_t B = x.batch(), H = x.height(), W = x.width(), C = x.channels(), win = o.window;
  require(win >= 1 && win <= std::min(H, W), ErrorKind::Value,
          "ssim window " + std::to_string(win) + " larger than the image");
  const double c1 = (o.k1 * o.dynamic_range) * (o.k1 * o.dynamic_range);
  const double c2 = (o.k2 * o.dynamic_range) * (o.k2 * o.dynamic_range);
  const auto xd = x.pixels.data(), yd = y.pixels.data();
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t tiles = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      for (std::size_t ty = 0; ty + win <= H; ty += win) {
        for (std::size_t tx = 0; tx + win <= W; tx += win) {
          double mx = 0.0, my = 0.0;
          for (std::size_t i = ty; i < ty + win; ++i) {
            for (std::size_t j = tx; j < tx + win; ++j) {
              const std::size_t at = ((b * H + i) * W + j) * C + ch;
              mx += xd[at];
              my += yd[at];
            }
          }
          mx /= n;
          my /= n;
          double vx = 0.0, vy = 0.0, cov = 0.0;
          for (std::size_t i = ty; i < ty + win; ++i) {
            for (std::size_t j = tx; j < tx + win; ++j) {
              const std::size_t at = ((b * H + i) * W + j) * C + ch;
              const double dx = xd[at] - mx, dy = yd[at] - my;
              vx += dx * dx;
              vy += dy * dy;
              cov += dx * dy;
            }
          }
          vx /= n;
          vy /= n;
          cov /= n;
          total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++tiles;
        }
      }
    }
  }
  return total / static_cast<double>(tiles);
}

ImageMetrics batch_metrics(const ImageBatch& x, const ImageBatch& y, const SsimOptions& options) {
  require(x.pixels.shape() == y.pixels.shape(), ErrorKind::Shape, "metric batches differ in shape");
  ImageMetrics m;
  const std::size_t B = x.batch(), n = x.height() * x.width() * x.channels();
  for (std::size_t b = 0; b < B; ++b) {
    const auto xs = x.pixels.data().subspan(b * n, n), ys = y.pixels.data().subspan(b * n, n);
    const double e = mean_squared_error(xs, ys);
    m.mse += e;
    m.psnr += psnr(xs, ys);
    m.ssim += ssim(single(x, b), single(y, b), options);
  }
  m.mse /= static_cast<double>(B);
  m.psnr /= static_cast<double>(B);
  m.ssim /= static_cast<double>(B);
  return m;
}

}  // namespace cvq
