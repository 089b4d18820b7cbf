#pragma once

// Nearest-codeword quantization along two partition axes of a latent grid.
//
//   Patch axis:   each of the h*w spatial vectors (dimension c) is a token.
//   Channel axis: each of the c channel maps (dimension h*w, flattened
//                 row-major) is a token.
//
// Both axes share the same codebook machinery, lookup, straight-through
// estimator and usage accounting.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvq/tensor.hpp"
#include "cvq/tokenizer.hpp"

namespace cvq {

class Rng;

enum class Axis { Patch, Channel };

std::string axis_name(Axis axis);
Axis parse_axis(const std::string& name);

/// Per-codeword assignment counters: lifetime totals plus the distinct
/// indices of every recorded batch.
class UsageTracker {
 public:
  explicit UsageTracker(std::size_t codebook_size = 0) : lifetime_(codebook_size, 0) {}

  void record(std::span<const std::size_t> indices);

  std::size_t codebook_size() const { return lifetime_.size(); }
  std::size_t batches() const { return history_.size(); }
  const std::vector<std::uint64_t>& lifetime_counts() const { return lifetime_; }
  const std::vector<std::uint32_t>& batch_distinct(std::size_t b) const { return history_[b]; }

 private:
  std::vector<std::uint64_t> lifetime_;
  std::vector<std::vector<std::uint32_t>> history_;
};

struct UsageStats {
  double utilization = 0.0;          // distinct indices in window / N
  std::size_t distinct = 0;
  std::size_t per_batch_distinct = 0;  // distinct indices in the newest batch
  std::size_t dead_code_count = 0;     // N - distinct
};

/// window == 0 means the whole recorded lifetime; otherwise the newest
/// `window` batches.
UsageStats usage_stats(const UsageTracker& usage, std::size_t window = 0);

class Codebook {
 public:
  Codebook(Axis axis, Tensor entries);

  /// Samples N rows from `tokens` ([T, dim]): without replacement when T >= N,
  /// with replacement otherwise.
  static Codebook from_tokens(Axis axis, std::size_t size, const Tensor& tokens, Rng& rng);

  Axis axis() const { return axis_; }
  std::size_t size() const { return entries_.dim(0); }
  std::size_t dim() const { return entries_.dim(1); }
  const Tensor& entries() const { return entries_; }
  Tensor& entries() { return entries_; }

  UsageTracker& usage() { return usage_; }
  const UsageTracker& usage() const { return usage_; }

 private:
  Axis axis_;
  Tensor entries_;
  UsageTracker usage_;
};

struct LookupResult {
  std::vector<std::size_t> indices;
  std::vector<double> distances;  // attained squared distances
};

/// argmin_n ||v_t - e_n||^2 for each of `count` row vectors; ties go to the
/// lowest index.
LookupResult lookup(std::span<const double> vectors, std::size_t dim, const Tensor& entries);
LookupResult lookup(const Tensor& vectors, const Codebook& codebook);

/// Channel-axis lookup computed directly on the [B, h, w, c] grid with the
/// Frobenius norm of z^(k) - E_n, each codeword read as an h x w matrix.
LookupResult lookup_frobenius(const LatentGrid& z, const Codebook& codebook);

struct QuantizationResult {
  LatentGrid zq;                     // straight-through quantized latent
  std::vector<std::size_t> indices;  // per image: h*w (patch) or c (channel)
  std::size_t tokens_per_image = 0;
  Tensor per_token_distance;         // [T]
  Tensor tokens;                     // pre-quantization tokens [T, dim]
  Tensor selected;                   // chosen codewords [T, dim], differentiable w.r.t. the codebook
  Tensor codebook_loss;              // mse(sg[z], e)
  Tensor commitment_loss;            // mse(z, sg[e]), unweighted
};

/// z + sg[e - z]: forward value e, gradient passes to z unchanged.
Tensor ste_wrap(const Tensor& z, const Tensor& e);

/// Lookup plus codebook/commitment losses for an arbitrary token matrix
/// [T, dim]; `zq` is left empty.
QuantizationResult quantize_tokens(const Tensor& tokens, const Codebook& codebook);

QuantizationResult quantize_patchwise(const LatentGrid& z, const Codebook& codebook);
QuantizationResult quantize_channelwise(const LatentGrid& z, const Codebook& codebook);
QuantizationResult quantize(const LatentGrid& z, const Codebook& codebook);

/// Codewords for given indices assembled back into a latent grid
/// (no straight-through path; for decoding token sequences).
LatentGrid dequantize(std::span<const std::size_t> indices, const Codebook& codebook, std::size_t batch,
                      std::size_t height, std::size_t width, std::size_t channels);

struct SeparabilityStats {
  double intra_mean = 0.0;
  double inter_mean = 0.0;
  double overlap_ratio = 0.0;
};

/// Token clouds of several images. Intra averages Euclidean distances over
/// all ordered token pairs of the same image (self pairs included); inter
/// over all pairs drawn from two different images. Overlap ratio is the share
/// of tokens whose nearest other token belongs to a different image (ties go
/// to the lowest global token index).
SeparabilityStats separability_stats(const std::vector<Tensor>& image_tokens);

/// Tokens for each image of a latent along an axis: [tokens_per_image, dim].
std::vector<Tensor> tokens_by_image(const LatentGrid& z, Axis axis);

}  // namespace cvq
