#include <doctest.h>

#include "cvq/error.hpp"
#include "cvq/quantizer.hpp"
#include "oracles.hpp"

using namespace cvq;

namespace {

LatentGrid random_grid(std::size_t B, std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  return LatentGrid(oracle::random_tensor({B, h, w, c}, rng));
}

// Codebook with some rows duplicated so that ties occur.
Tensor codebook_with_duplicates(std::size_t N, std::size_t dim, Rng& rng) {
  Tensor e = oracle::random_tensor({N, dim}, rng);
  auto v = e.to_vector();
  for (std::size_t n = 1; n < N; n += 3) {
    const std::size_t src = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 1)));
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(src * dim), dim, v.begin() + static_cast<std::ptrdiff_t>(n * dim));
  }
  return Tensor({N, dim}, v, true);
}

}  // namespace

TEST_CASE("lookup equals exhaustive argmin on both axes, ties included") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 2, h = 3, w = 2, c = 5, N = 17;
    const LatentGrid z = random_grid(B, h, w, c, rng);
    for (Axis axis : {Axis::Patch, Axis::Channel}) {
      const std::size_t dim = axis == Axis::Patch ? c : h * w;
      Tensor e = codebook_with_duplicates(N, dim, rng);
      const Codebook cb(axis, e);
      const Tensor tokens = axis == Axis::Patch ? z.patch_view() : z.channel_view();
      const auto got = lookup(tokens, cb).indices;
      CHECK(got == oracle::brute_argmin(tokens.to_vector(), dim, e.to_vector()));
      const QuantizationResult q = quantize(z, cb);
      CHECK(q.indices == got);
      CHECK(q.tokens_per_image == (axis == Axis::Patch ? h * w : c));
    }
  }
}

TEST_CASE("a token equal to duplicated codewords picks the lowest index") {
  const Tensor e({4, 2}, {5, 5, 1, 2, 9, 9, 1, 2}, true);
  const auto r = lookup(Tensor({1, 2}, {1, 2}), Codebook(Axis::Patch, e));
  CHECK(r.indices[0] == 1);
  CHECK(r.distances[0] == 0.0);
}

TEST_CASE("Frobenius lookup agrees with the flattened channel lookup") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const LatentGrid z = random_grid(3, 4, 3, 6, rng);
    const Codebook cb(Axis::Channel, codebook_with_duplicates(9, 12, rng));
    const auto a = lookup_frobenius(z, cb);
    const auto b = lookup(z.channel_view(), cb);
    CHECK(a.indices == b.indices);
  }
}

TEST_CASE("channel view lists each channel map row-major") {
  Rng rng(13);
  const LatentGrid z = random_grid(2, 3, 4, 5, rng);
  const Tensor cv = z.channel_view();
  const auto zd = z.values().data();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          CHECK(cv[(b * 5 + k) * 12 + i * 4 + j] == zd[((b * 3 + i) * 4 + j) * 5 + k]);
  const LatentGrid back = LatentGrid::from_channel_view(cv, 2, 3, 4);
  CHECK(back.values().to_vector() == z.values().to_vector());
  CHECK(LatentGrid::from_patch_view(z.patch_view(), 2, 3, 4).values().to_vector() == z.values().to_vector());
}

TEST_CASE("straight-through forward equals the codeword and backward is the identity") {
  Rng rng(14);
  for (Axis axis : {Axis::Patch, Axis::Channel}) {
    Tensor zt = oracle::random_tensor({2, 2, 2, 4}, rng);
    zt.set_requires_grad(true);
    const LatentGrid z(zt);
    const Codebook cb(axis, oracle::random_tensor({6, 4}, rng));
    const QuantizationResult q = quantize(z, cb);
    const auto rows = index_rows(stop_gradient(cb.entries()), q.indices);
    const LatentGrid expect = axis == Axis::Patch ? LatentGrid::from_patch_view(rows, 2, 2, 2)
                                                  : LatentGrid::from_channel_view(rows, 2, 2, 2);
    CHECK(q.zq.values().to_vector() == expect.values().to_vector());
    const Tensor upstream = oracle::random_tensor(q.zq.values().shape(), rng);
    sum(q.zq.values() * upstream).backward();
    CHECK(zt.grad() == upstream.to_vector());
    CHECK_FALSE(cb.entries().has_grad());
  }
}

TEST_CASE("codebook loss moves only codewords, commitment only the latent") {
  Rng rng(15);
  Tensor zt = oracle::random_tensor({1, 2, 2, 3}, rng);
  zt.set_requires_grad(true);
  const Codebook cb(Axis::Patch, oracle::random_tensor({5, 3}, rng));
  QuantizationResult q = quantize(LatentGrid(zt), cb);
  q.codebook_loss.backward();
  CHECK_FALSE(zt.has_grad());
  CHECK(cb.entries().has_grad());
  QuantizationResult q2 = quantize(LatentGrid(zt), cb);
  const_cast<Tensor&>(cb.entries()).zero_grad();
  q2.commitment_loss.backward();
  CHECK(zt.has_grad());
  CHECK_FALSE(cb.entries().has_grad());
}

TEST_CASE("single-code codebook is fully used") {
  Rng rng(16);
  Codebook cb(Axis::Channel, oracle::random_tensor({1, 4}, rng));
  const QuantizationResult q = quantize(random_grid(3, 2, 2, 5, rng), cb);
  for (auto i : q.indices) CHECK(i == 0);
  cb.usage().record(q.indices);
  CHECK(usage_stats(cb.usage()).utilization == 1.0);
}

TEST_CASE("usage windows count distinct codes over the newest batches") {
  UsageTracker u(8);
  u.record(std::vector<std::size_t>{0, 1, 1});
  u.record(std::vector<std::size_t>{2, 2});
  u.record(std::vector<std::size_t>{3});
  const UsageStats life = usage_stats(u, 0);
  CHECK(life.distinct == 4);
  CHECK(life.utilization == 0.5);
  CHECK(life.dead_code_count == 4);
  CHECK(life.per_batch_distinct == 1);
  CHECK(usage_stats(u, 2).distinct == 2);
  CHECK(usage_stats(u, 10).distinct == 4);
  CHECK(u.lifetime_counts()[1] == 2);
  CHECK_THROWS_AS(usage_stats(UsageTracker(3)), Error);
}

TEST_CASE("codebook init samples rows without replacement when possible") {
  Rng rng(17);
  std::vector<double> v(40);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const Tensor tokens({20, 2}, v);
  Rng init(3);
  const Codebook cb = Codebook::from_tokens(Axis::Patch, 20, tokens, init);
  std::vector<double> firsts;
  for (std::size_t n = 0; n < 20; ++n) firsts.push_back(cb.entries()[n * 2]);
  std::sort(firsts.begin(), firsts.end());
  CHECK(std::adjacent_find(firsts.begin(), firsts.end()) == firsts.end());
  Rng init2(3);
  const Codebook big = Codebook::from_tokens(Axis::Patch, 50, tokens, init2);
  CHECK(big.size() == 50);
  for (std::size_t n = 0; n < 50; ++n) CHECK(static_cast<std::size_t>(big.entries()[n * 2]) % 2 == 0);
}

TEST_CASE("dequantize inverts lookup on codeword inputs") {
  Rng rng(18);
  const Codebook cb(Axis::Channel, oracle::random_tensor({7, 6}, rng));
  const std::vector<std::size_t> idx = {3, 0, 6, 6, 1, 2, 5, 4};
  const LatentGrid z = dequantize(idx, cb, 2, 2, 3, 4);
  CHECK(quantize(z, cb).indices == idx);
}

TEST_CASE("geometry errors") {
  Rng rng(19);
  const LatentGrid z = random_grid(1, 2, 2, 3, rng);
  CHECK_THROWS_AS(quantize(z, Codebook(Axis::Patch, oracle::random_tensor({4, 5}, rng))), Error);
  CHECK_THROWS_AS(quantize_patchwise(z, Codebook(Axis::Channel, oracle::random_tensor({4, 3}, rng))), Error);
  CHECK_THROWS_AS(parse_axis("diagonal"), Error);
}

TEST_CASE("separability of identical images: inter equals intra, full overlap") {
  Rng rng(20);
  const Tensor t = oracle::random_tensor({4, 3}, rng);
  const SeparabilityStats s = separability_stats({t, t});
  CHECK(s.inter_mean == doctest::Approx(s.intra_mean).epsilon(1e-14));
  CHECK(s.overlap_ratio == 1.0);
  const Tensor far({4, 3}, std::vector<double>(12, 100.0));
  const Tensor near = oracle::random_tensor({4, 3}, rng, -0.01, 0.01);
  const SeparabilityStats apart = separability_stats({near, far + oracle::random_tensor({4, 3}, rng, -0.01, 0.01)});
  CHECK(apart.overlap_ratio == 0.0);
  CHECK(apart.inter_mean > apart.intra_mean);
}
