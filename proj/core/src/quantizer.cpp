#include "cvq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cvq/error.hpp"
#include "cvq/parallel.hpp"
#include "cvq/rng.hpp"

namespace cvq {

std::string axis_name(Axis axis) { return axis == Axis::Patch ? "patch" : "channel"; }

Axis parse_axis(const std::string& name) {
  if (name == "patch") return Axis::Patch;
  if (name == "channel") return Axis::Channel;
  fail(ErrorKind::Config, "unknown axis '" + name + "' (expected patch|channel)");
}

// ---------------------------------------------------------------- usage

void UsageTracker::record(std::span<const std::size_t> indices) {
  std::vector<std::uint32_t> distinct;
  distinct.reserve(indices.size());
  for (std::size_t i : indices) {
    require(i < lifetime_.size(), ErrorKind::Value, "usage index out of range");
    ++lifetime_[i];
    distinct.push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  history_.push_back(std::move(distinct));
}

UsageStats usage_stats(const UsageTracker& usage, std::size_t window) {
  require(usage.batches() > 0, ErrorKind::State, "usage window is empty");
  const std::size_t N = usage.codebook_size();
  UsageStats s;
  if (window == 0) {
    s.distinct = static_cast<std::size_t>(
        std::count_if(usage.lifetime_counts().begin(), usage.lifetime_counts().end(), [](auto c) { return c > 0; }));
  } else {
    std::vector<bool> seen(N, false);
    const std::size_t first = usage.batches() > window ? usage.batches() - window : 0;
    for (std::size_t b = first; b < usage.batches(); ++b) {
      for (auto i : usage.batch_distinct(b)) seen[i] = true;
    }
    s.distinct = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  }
  s.utilization = static_cast<double>(s.distinct) / static_cast<double>(N);
  s.per_batch_distinct = usage.batch_distinct(usage.batches() - 1).size();
  s.dead_code_count = N - s.distinct;
  return s;
}

// ---------------------------------------------------------------- codebook

Codebook::Codebook(Axis axis, Tensor entries) : axis_(axis), entries_(std::move(entries)) {
  require(entries_.rank() == 2, ErrorKind::Shape, "codebook entries must be [N, dim]");
  if (!entries_.requires_grad()) entries_.set_requires_grad(true);
  usage_ = UsageTracker(entries_.dim(0));
}

Codebook Codebook::from_tokens(Axis axis, std::size_t size, const Tensor& tokens, Rng& rng) {
  require(size > 0, ErrorKind::Value, "codebook size must be positive");
  require(tokens.rank() == 2, ErrorKind::Shape, "codebook init tokens must be [T, dim]");
  const std::size_t T = tokens.dim(0), dim = tokens.dim(1);
  std::vector<std::size_t> rows(size);
  if (T >= size) {
    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < size; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(T - 1)));
      std::swap(perm[i], perm[j]);
      rows[i] = perm[i];
    }
  } else {
    for (auto& r : rows) r = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - 1)));
  }
  std::vector<double> data(size * dim);
  const auto td = tokens.data();
  for (std::size_t n = 0; n < size; ++n) std::copy_n(td.data() + rows[n] * dim, dim, data.data() + n * dim);
  return Codebook(axis, Tensor({size, dim}, std::move(data), true));
}

// ---------------------------------------------------------------- lookup

LookupResult lookup(std::span<const double> vectors, std::size_t dim, const Tensor& entries) {
  require(entries.rank() == 2, ErrorKind::Shape, "codebook entries must be [N, dim]");
  const std::size_t N = entries.dim(0);
  require(N > 0, ErrorKind::Value, "empty codebook");
  require(entries.dim(1) == dim, ErrorKind::Shape,
          "token dim " + std::to_string(dim) + " does not match codebook dim " + std::to_string(entries.dim(1)));
  require(dim > 0 && vectors.size() % dim == 0, ErrorKind::Shape, "vector buffer is not a multiple of dim");
  const std::size_t T = vectors.size() / dim;
  LookupResult out;
  out.indices.resize(T);
  out.distances.resize(T);
  const double* e = entries.data().data();
  parallel_for(T, 8, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const double* v = vectors.data() + t * dim;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n < N; ++n) {
        const double* en = e + n * dim;
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = v[j] - en[j];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = n;
        }
      }
      out.indices[t] = best;
      out.distances[t] = best_d;
    }
  });
  return out;
}

LookupResult lookup(const Tensor& vectors, const Codebook& codebook) {
  require(vectors.rank() == 2, ErrorKind::Shape, "lookup expects [T, dim] vectors");
  return lookup(vectors.data(), vectors.dim(1), codebook.entries());
}

LookupResult lookup_frobenius(const LatentGrid& z, const Codebook& codebook) {
  const std::size_t B = z.batch(), h = z.height(), w = z.width(), c = z.channels();
  require(codebook.dim() == h * w, ErrorKind::Shape, "channel codebook dim must equal h*w");
  const auto zd = z.values().data();
  const auto ed = codebook.entries().data();
  LookupResult out;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n < codebook.size(); ++n) {
        double fro = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const double diff = zd[((b * h + i) * w + j) * c + k] - ed[n * h * w + i * w + j];
            fro += diff * diff;
          }
        }
        if (fro < best_d) {
          best_d = fro;
          best = n;
        }
      }
      out.indices.push_back(best);
      out.distances.push_back(best_d);
    }
  }
  return out;
}

// ---------------------------------------------------------------- quantize

Tensor ste_wrap(const Tensor& z, const Tensor& e) {
  require(z.shape() == e.shape(), ErrorKind::Shape, "ste_wrap shape mismatch");
  return z + stop_gradient(e - z);
}

QuantizationResult quantize_tokens(const Tensor& tokens, const Codebook& codebook) {
  QuantizationResult r;
  LookupResult lk = lookup(tokens, codebook);
  r.selected = index_rows(codebook.entries(), lk.indices);
  r.tokens = tokens;
  r.codebook_loss = mse(stop_gradient(tokens), r.selected);
  r.commitment_loss = mse(tokens, stop_gradient(r.selected));
  const std::size_t T = lk.distances.size();
  r.per_token_distance = Tensor({T}, std::move(lk.distances));
  r.indices = std::move(lk.indices);
  return r;
}

QuantizationResult quantize_patchwise(const LatentGrid& z, const Codebook& codebook) {
  require(codebook.axis() == Axis::Patch, ErrorKind::Value, "patch quantization needs a patch codebook");
  require(codebook.dim() == z.channels(), ErrorKind::Shape,
          "patch codebook dim " + std::to_string(codebook.dim()) + " != latent channels " +
              std::to_string(z.channels()));
  QuantizationResult r = quantize_tokens(z.patch_view(), codebook);
  r.tokens_per_image = z.spatial();
  r.zq = LatentGrid::from_patch_view(ste_wrap(r.tokens, r.selected), z.batch(), z.height(), z.width());
  return r;
}

QuantizationResult quantize_channelwise(const LatentGrid& z, const Codebook& codebook) {
  require(codebook.axis() == Axis::Channel, ErrorKind::Value, "channel quantization needs a channel codebook");
  require(codebook.dim() == z.spatial(), ErrorKind::Shape,
          "channel codebook dim " + std::to_string(codebook.dim()) + " != h*w " + std::to_string(z.spatial()));
  QuantizationResult r = quantize_tokens(z.channel_view(), codebook);
  r.tokens_per_image = z.channels();
  r.zq = LatentGrid::from_channel_view(ste_wrap(r.tokens, r.selected), z.batch(), z.height(), z.width());
  return r;
}

QuantizationResult quantize(const LatentGrid& z, const Codebook& codebook) {
  return codebook.axis() == Axis::Patch ? quantize_patchwise(z, codebook) : quantize_channelwise(z, codebook);
}

LatentGrid dequantize(std::span<const std::size_t> indices, const Codebook& codebook, std::size_t batch,
                      std::size_t height, std::size_t width, std::size_t channels) {
  const Tensor rows = index_rows(stop_gradient(codebook.entries()), indices);
  if (codebook.axis() == Axis::Patch) {
    require(indices.size() == batch * height * width && codebook.dim() == channels, ErrorKind::Shape,
            "patch indices do not match the grid");
    return LatentGrid::from_patch_view(rows, batch, height, width);
  }
  require(indices.size() == batch * channels && codebook.dim() == height * width, ErrorKind::Shape,
          "channel indices do not match the grid");
  return LatentGrid::from_channel_view(rows, batch, height, width);
}

// ---------------------------------------------------------------- separability

std::vector<Tensor> tokens_by_image(const LatentGrid& z, Axis axis) {
  const Tensor all = axis == Axis::Patch ? z.patch_view() : z.channel_view();
  const std::size_t per = all.dim(0) / z.batch();
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < z.batch(); ++b) out.push_back(stop_gradient(slice(all, 0, b * per, per)));
  return out;
}

SeparabilityStats separability_stats(const std::vector<Tensor>& image_tokens) {
  require(image_tokens.size() >= 2, ErrorKind::Value, "separability needs at least two images");
  const std::size_t dim = image_tokens[0].rank() == 2 ? image_tokens[0].dim(1) : 0;
  std::vector<const double*> rows;
  std::vector<std::size_t> owner;
  for (std::size_t img = 0; img < image_tokens.size(); ++img) {
    const Tensor& t = image_tokens[img];
    require(t.rank() == 2 && t.dim(1) == dim, ErrorKind::Shape, "token dims differ between images");
    require(t.dim(0) >= 2, ErrorKind::Value, "separability needs at least two tokens per image");
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      rows.push_back(t.data().data() + r * dim);
      owner.push_back(img);
    }
  }
  const std::size_t T = rows.size();
  auto dist = [dim](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  };
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0, crossed = 0;
  for (std::size_t a = 0; a < T; ++a) {
    std::size_t nn = T;
    double nn_d = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < T; ++b) {
      const double d = dist(rows[a], rows[b]);
      if (owner[a] == owner[b]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
      if (b != a && d < nn_d) {
        nn_d = d;
        nn = b;
      }
    }
    if (owner[nn] != owner[a]) ++crossed;
  }
  return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter),
          static_cast<double>(crossed) / static_cast<double>(T)};
}

}  // namespace cvq
