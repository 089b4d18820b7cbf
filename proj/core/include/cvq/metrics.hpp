#pragma once

// Image fidelity metrics on [0, 1] pixel data.

#include <cstddef>
#include <span>
#include <vector>

#include "cvq/tokenizer.hpp"

namespace cvq {

/// Reported PSNR for identical inputs.
inline constexpr double kPsnrCap = 99.0;

double mean_squared_error(std::span<const double> x, std::span<const double> y);

/// 10 log10(1 / mse), capped at kPsnrCap.
double psnr_from_mse(double mse);
double psnr(std::span<const double> x, std::span<const double> y);

struct SsimOptions {
  std::size_t window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over non-overlapping window x window tiles of every channel of
/// every image. Partial tiles at the right and bottom edges are skipped.
/// Statistics use population (1/n) variances.
double ssim(const ImageBatch& x, const ImageBatch& y, const SsimOptions& options = {});

struct ImageMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Per-image metrics averaged over the batch (PSNR is averaged in dB).
ImageMetrics batch_metrics(const ImageBatch& x, const ImageBatch& y, const SsimOptions& options = {});

}  // namespace cvq
