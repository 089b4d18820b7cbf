#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace cvq {

/// Single image, row-major height x width x channels, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Reads P2/P3/P5/P6 files (any maxval up to 65535).
Image read_pnm(const std::filesystem::path& path);
Image parse_pnm(const std::string& bytes);

/// Writes binary P5 (1 channel) or P6 (3 channels) with maxval 255.
/// Values are clamped to [0, 1] and rounded to the nearest level.
void write_pnm(const std::filesystem::path& path, const Image& image);

Image to_channels(const Image& image, std::size_t channels);

/// Largest centred crop with the aspect ratio of height:width.
Image center_crop(const Image& image, std::size_t height, std::size_t width);

/// Area-weighted box filter resample. Integer upsampling replicates pixels.
Image box_resize(const Image& image, std::size_t height, std::size_t width);

}  // namespace cvq
