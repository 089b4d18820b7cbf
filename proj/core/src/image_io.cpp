#include "cvq/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cvq/error.hpp"
#include "cvq/hashing.hpp"

namespace cvq {
namespace {

class PnmReader {
 public:
  explicit PnmReader(const std::string& bytes) : b_(bytes) {}

  std::size_t header_int() {
    skip_space_and_comments();
    require(pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_])), ErrorKind::Io,
            "malformed PNM header");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      require(v < (1u << 24), ErrorKind::Io, "PNM header value too large");
      ++pos_;
    }
    return v;
  }

  void single_whitespace() {
    require(pos_ < b_.size() && std::isspace(static_cast<unsigned char>(b_[pos_])), ErrorKind::Io,
            "missing whitespace after PNM header");
    ++pos_;
  }

  std::size_t binary_sample(bool wide) {
    if (wide) {
      require(pos_ + 2 <= b_.size(), ErrorKind::Io, "truncated PNM raster");
      const auto hi = static_cast<unsigned char>(b_[pos_]);
      const auto lo = static_cast<unsigned char>(b_[pos_ + 1]);
      pos_ += 2;
      return (static_cast<std::size_t>(hi) << 8) | lo;
    }
    require(pos_ < b_.size(), ErrorKind::Io, "truncated PNM raster");
    return static_cast<unsigned char>(b_[pos_++]);
  }

  char peek2() const { return pos_ + 1 < b_.size() ? b_[pos_ + 1] : '\0'; }
  void advance(std::size_t n) { pos_ += n; }
  char at(std::size_t i) const { return i < b_.size() ? b_[i] : '\0'; }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

Image parse_pnm(const std::string& bytes) {
  PnmReader r(bytes);
  require(r.at(0) == 'P', ErrorKind::Io, "not a PNM file");
  const char kind = r.at(1);
  require(kind == '2' || kind == '3' || kind == '5' || kind == '6', ErrorKind::Io,
          std::string("unsupported PNM variant P") + kind);
  r.advance(2);
  Image img;
  img.width = r.header_int();
  img.height = r.header_int();
  const std::size_t maxval = r.header_int();
  require(img.width > 0 && img.height > 0, ErrorKind::Io, "PNM with zero size");
  require(maxval > 0 && maxval <= 65535, ErrorKind::Io, "PNM maxval out of range");
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  img.pixels.resize(img.height * img.width * img.channels);
  const bool binary = kind == '5' || kind == '6';
  if (binary) r.single_whitespace();
  for (auto& p : img.pixels) {
    const std::size_t v = binary ? r.binary_sample(maxval > 255) : r.header_int();
    require(v <= maxval, ErrorKind::Io, "PNM sample exceeds maxval");
    p = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

Image read_pnm(const std::filesystem::path& path) { return parse_pnm(read_file(path)); }

void write_pnm(const std::filesystem::path& path, const Image& image) {
  require(image.channels == 1 || image.channels == 3, ErrorKind::Value, "PNM output needs 1 or 3 channels");
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_file(path, out);
}

Image to_channels(const Image& image, std::size_t channels) {
  require(channels == 1 || channels == 3, ErrorKind::Value, "channels must be 1 or 3");
  if (image.channels == channels) return image;
  Image out{image.height, image.width, channels, {}};
  out.pixels.resize(image.height * image.width * channels);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    if (channels == 3) {
      for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = image.pixels[i];
    } else {
      const double* p = &image.pixels[i * 3];
      out.pixels[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return out;
}

Image center_crop(const Image& image, std::size_t height, std::size_t width) {
  require(height > 0 && width > 0, ErrorKind::Value, "crop target must be positive");
  // Compare aspect ratios with integer cross-multiplication.
  std::size_t ch = image.height, cw = image.width;
  if (image.width * height > image.height * width) {
    cw = std::max<std::size_t>(1, (image.height * width + height / 2) / height);
  } else if (image.width * height < image.height * width) {
    ch = std::max<std::size_t>(1, (image.width * height + width / 2) / width);
  }
  if (ch == image.height && cw == image.width) return image;
  const std::size_t y0 = (image.height - ch) / 2;
  const std::size_t x0 = (image.width - cw) / 2;
  Image out{ch, cw, image.channels, {}};
  out.pixels.resize(ch * cw * image.channels);
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
  return out;
}

namespace {

// weights[o] lists (source index, weight) pairs covering output cell o.
std::vector<std::vector<std::pair<std::size_t, double>>> box_weights(std::size_t src, std::size_t dst) {
  std::vector<std::vector<std::pair<std::size_t, double>>> w(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    if (src % dst == 0 || dst % src == 0) {
      // Exact rational bounds avoid floating error on integer ratios.
      if (src >= dst) {
        const std::size_t f = src / dst;
        for (std::size_t s = o * f; s < (o + 1) * f; ++s) w[o].emplace_back(s, 1.0 / static_cast<double>(f));
      } else {
        w[o].emplace_back(o / (dst / src), 1.0);
      }
      continue;
    }
    const double lo = static_cast<double>(o) * scale;
    const double hi = static_cast<double>(o + 1) * scale;
    for (auto s = static_cast<std::size_t>(std::floor(lo)); s < src && static_cast<double>(s) < hi; ++s) {
      const double overlap = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) w[o].emplace_back(s, overlap / scale);
    }
  }
  return w;
}

}  // namespace

Image box_resize(const Image& image, std::size_t height, std::size_t width) {
  require(height > 0 && width > 0, ErrorKind::Value, "resize target must be positive");
  if (image.height == height && image.width == width) return image;
  const auto wy = box_weights(image.height, height);
  const auto wx = box_weights(image.width, width);
  const std::size_t C = image.channels;
  Image rows{height, image.width, C, std::vector<double>(height * image.width * C, 0.0)};
  for (std::size_t y = 0; y < height; ++y)
    for (auto [sy, wgt] : wy[y])
      for (std::size_t x = 0; x < image.width; ++x)
        for (std::size_t c = 0; c < C; ++c) rows.at(y, x, c) += wgt * image.at(sy, x, c);
  Image out{height, width, C, std::vector<double>(height * width * C, 0.0)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (auto [sx, wgt] : wx[x])
        for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) += wgt * rows.at(y, sx, c);
  for (auto& p : out.pixels) p = std::clamp(p, 0.0, 1.0);
  return out;
}

}  // namespace cvq
