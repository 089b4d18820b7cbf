#pragma once

// Hermetic image corpora. A dataset directory holds NTB shards
// (images_NNN.ntb as [n, H, W, C], labels_NNN.ntb as [n]) and a
// manifest.json written last, which echoes the generating spec, the split
// ids and a SHA-256 per shard.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvq/image_io.hpp"

namespace cvq {

enum class CorpusKind { Textures, Shapes, Mixed };

std::string corpus_kind_name(CorpusKind kind);
CorpusKind parse_corpus_kind(const std::string& name);

struct CorpusSpec {
  CorpusKind kind = CorpusKind::Mixed;
  std::size_t count = 5000;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t classes = 10;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMaxClasses = 10;
inline constexpr std::size_t kShardSize = 1000;

/// Renders image i of the corpus. Pure function of (spec, i).
Image render_corpus_image(const CorpusSpec& spec, std::size_t index, std::size_t* label = nullptr);

/// 90/10 train/val split of [0, count) shuffled by seed.
void split_ids(std::size_t count, std::uint64_t seed, std::vector<std::size_t>& train, std::vector<std::size_t>& val);

struct CorpusSummary {
  std::size_t count = 0;
  std::vector<std::string> files;
};

CorpusSummary generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

struct IngestSummary {
  std::size_t ingested = 0;
  std::vector<std::string> failed;  // "file: reason"
};

/// Converts every .pgm/.ppm file in `in_dir` (sorted by name) into a dataset
/// at `out_dir`: centre crop, box resize, channel conversion. Unreadable files
/// are recorded in the summary and skipped.
IngestSummary ingest_directory(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir,
                               std::size_t height, std::size_t width, std::size_t channels, std::uint64_t seed = 0);

/// In-memory dataset loaded from a directory.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& dir);
  static Dataset from_images(const std::vector<Image>& images, std::vector<std::size_t> labels, std::uint64_t seed);

  std::size_t size() const { return labels_.size(); }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t image_numel() const { return height_ * width_ * channels_; }

  const std::vector<std::size_t>& train_ids() const { return train_; }
  const std::vector<std::size_t>& val_ids() const { return val_; }
  std::size_t label(std::size_t i) const { return labels_[i]; }
  std::span<const double> pixels(std::size_t i) const {
    return std::span<const double>(pixels_).subspan(i * image_numel(), image_numel());
  }
  Image image(std::size_t i) const;

  /// Stacked [n, H, W, C] pixel buffer for the given ids.
  std::vector<double> gather(std::span<const std::size_t> ids) const;

 private:
  std::size_t height_ = 0, width_ = 0, channels_ = 0;
  std::vector<double> pixels_;
  std::vector<std::size_t> labels_;
  std::vector<std::size_t> train_, val_;
};

}  // namespace cvq
