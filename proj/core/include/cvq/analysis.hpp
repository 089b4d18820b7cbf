#pragma once

// Evaluation reports: progressive channel sweeps, single-channel ablations
// and the patch-vs-channel codebook comparison.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvq/config.hpp"
#include "cvq/datasets.hpp"
#include "cvq/metrics.hpp"
#include "cvq/quantizer.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

struct SweepRow {
  std::size_t n_channels = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

struct SweepReport {
  std::string model_id;
  std::string config_hash;
  std::vector<SweepRow> rows;
};

/// Reconstruction from the first n channel tokens (rest zeroed) for every n
/// in `n_list`, which must be strictly increasing and within [1, c].
SweepReport progressive_sweep(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                              std::span<const std::size_t> ids, std::span<const std::size_t> n_list,
                              std::size_t chunk = 100);

struct AblationResult {
  std::size_t channel = 0;  // 1-based
  ImageBatch baseline;
  ImageBatch ablated;
  Tensor diff;              // baseline - ablated, unclamped
  double diff_energy = 0.0; // sum of squared diff
};

/// Zeroes channel k (1-based) of a quantized latent and decodes it next to
/// the untouched latent.
AblationResult ablate_latent(const Autoencoder& model, const LatentGrid& quantized, std::size_t k);

/// Quantizes `image` ([1, H, W, C]) and ablates channel k.
AblationResult channel_ablation(const Autoencoder& model, const Codebook& codebook, const ImageBatch& image,
                                std::size_t k);

struct UsagePoint {
  std::size_t step = 0;
  double lifetime = 0.0;
  double window = 0.0;
};

struct ComparisonCell {
  std::string axis;
  std::size_t codebook_size = 0;
  std::string config_hash;
  double lifetime_utilization = 0.0;
  double window_utilization = 0.0;      // newest epoch of training batches
  double validation_utilization = 0.0;  // one pass over the validation split
  std::size_t dead_codes = 0;           // lifetime
  std::vector<UsagePoint> series;
  ImageMetrics validation;
  SeparabilityStats separability;
};

struct ComparisonReport {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<ComparisonCell> cells;
};

/// Trains one tokenizer per (axis, N) cell from `base` with identical seeds
/// and splits and no nested dropout. When `out_dir` is non-empty each cell
/// writes its training log under out_dir/cell_<axis>_<N>/.
ComparisonReport run_comparison(const Dataset& data, const RunConfig& base, std::span<const std::string> axes,
                                std::span<const std::size_t> sizes, const std::filesystem::path& out_dir = {});

/// Separability of token clouds for the first `images` validation images.
SeparabilityStats token_separability(const Autoencoder& model, const Dataset& data, std::span<const std::size_t> ids,
                                     Axis axis);

void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report);
void write_comparison_csv(const std::filesystem::path& path, const ComparisonReport& report);

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  std::string series;
};

/// (x, y, series) triples for external plotting tools.
void write_plot_data(const std::filesystem::path& path, std::span<const PlotPoint> points);

/// JSON sidecar next to a report: config hash, seed and checkpoint ids.
void write_sidecar(const std::filesystem::path& path, const RunConfig& config,
                   const std::vector<std::pair<std::string, std::string>>& content_ids);

}  // namespace cvq
