#include <doctest.h>

#include <cmath>

#include "cvq/car.hpp"
#include "cvq/error.hpp"
#include "oracles.hpp"

using namespace cvq;

namespace {

CarConfig micro() {
  CarConfig c;
  c.geometry = {2, 2, 6, 8};
  c.classes = 3;
  c.width = 8;
  c.layers = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

TokenSequence random_sequence(const CarConfig& c, Rng& rng) {
  TokenSequence s;
  for (std::size_t k = 0; k < c.geometry.channels; ++k) {
    s.indices.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(c.geometry.codebook_size - 1))));
  }
  s.label = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(c.classes - 1)));
  return s;
}

Tensor random_codebook(const CarConfig& c, Rng& rng) {
  return oracle::random_tensor({c.geometry.codebook_size, c.token_dim()}, rng);
}

}  // namespace

TEST_CASE("logits row k ignores tokens after position k") {
  Rng rng(1);
  const CarConfig cfg = micro();
  const CarModel m(cfg, 3);
  const Tensor cb = random_codebook(cfg, rng);
  const TokenSequence s = random_sequence(cfg, rng);
  const auto base = m.forward_logits(s, cb).to_vector();
  const std::size_t N = cfg.geometry.codebook_size, c = cfg.geometry.channels;
  for (std::size_t j = 0; j < c; ++j) {
    TokenSequence p = s;
    p.indices[j] = (p.indices[j] + 3) % N;
    const auto probe = m.forward_logits(p, cb).to_vector();
    for (std::size_t row = 0; row <= j; ++row)
      for (std::size_t n = 0; n < N; ++n) CHECK(probe[row * N + n] == base[row * N + n]);
    if (j + 1 < c) CHECK(probe != base);
  }
}

TEST_CASE("sequence NLL equals the sum of stepwise conditionals") {
  Rng rng(2);
  const CarConfig cfg = micro();
  const CarModel m(cfg, 4);
  const Tensor cb = random_codebook(cfg, rng);
  const TokenSequence s = random_sequence(cfg, rng);
  double stepwise = 0.0;
  for (std::size_t k = 0; k < cfg.geometry.channels; ++k) {
    const std::span<const std::size_t> prefix(s.indices.data(), k);
    const Tensor lp = log_softmax(m.prefix_logits(s.label, prefix, cb));
    stepwise -= lp[k * cfg.geometry.codebook_size + s.indices[k]];
  }
  CHECK(std::abs(m.sequence_nll(s, cb) - stepwise) < 1e-10);
}

TEST_CASE("initial loss is close to ln N") {
  Rng rng(3);
  CarConfig cfg;
  const CarModel m(cfg, 5);
  const Tensor cb = random_codebook(cfg, rng);
  std::vector<TokenSequence> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_sequence(cfg, rng));
  std::vector<std::size_t> targets;
  for (const auto& s : batch) targets.insert(targets.end(), s.indices.begin(), s.indices.end());
  const double loss = cross_entropy(m.forward_logits(batch, cb), targets).item();
  CHECK(std::abs(loss - std::log(64.0)) / std::log(64.0) < 0.05);
}

TEST_CASE("zero head gives uniform predictions") {
  Rng rng(4);
  const CarConfig cfg = micro();
  CarModel m(cfg, 6);
  for (Tensor* t : {&m.head().weight, &m.head().bias}) {
    auto d = t->mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  const Tensor p = softmax(m.forward_logits(random_sequence(cfg, rng), random_codebook(cfg, rng)));
  for (double v : p.to_vector()) CHECK(v == doctest::Approx(1.0 / 8.0).epsilon(1e-14));
}

TEST_CASE("micro transformer gradients match finite differences") {
  Rng rng(5);
  for (bool index_embedding : {false, true}) {
    CarConfig cfg = micro();
    cfg.index_embedding = index_embedding;
    const CarModel m(cfg, 7);
    const Tensor cb = random_codebook(cfg, rng);
    const std::vector<TokenSequence> batch = {random_sequence(cfg, rng), random_sequence(cfg, rng)};
    std::vector<std::size_t> targets;
    for (const auto& s : batch) targets.insert(targets.end(), s.indices.begin(), s.indices.end());
    auto loss = [&] { return cross_entropy(m.forward_logits(batch, cb), targets); };
    CHECK(oracle::param_gradcheck(loss, m.parameters(), 1e-6, 16) < 1e-3);
  }
}

TEST_CASE("label conditioning reaches the first prediction") {
  Rng rng(6);
  const CarConfig cfg = micro();
  const CarModel m(cfg, 8);
  const Tensor cb = random_codebook(cfg, rng);
  const std::vector<std::size_t> none;
  CHECK(m.prefix_logits(0, none, cb).to_vector() != m.prefix_logits(1, none, cb).to_vector());
}

TEST_CASE("loss falls during the first hundred steps on learnable data") {
  Rng rng(7);
  const CarConfig cfg = micro();
  CarModel m(cfg, 9);
  const Tensor cb = random_codebook(cfg, rng);
  std::vector<TokenSequence> data;
  for (std::size_t l = 0; l < cfg.classes; ++l) {
    TokenSequence s;
    s.label = l;
    for (std::size_t k = 0; k < cfg.geometry.channels; ++k) s.indices.push_back((l * 3 + k) % cfg.geometry.codebook_size);
    data.push_back(s);
  }
  AdamConfig ac;
  ac.lr = 3e-3;
  ac.beta1 = 0.9;
  ac.beta2 = 0.96;
  ac.weight_decay = 1e-3;
  ac.decoupled = true;
  Adam opt(m.parameters(), ac);
  const double first = car_train_step(m, opt, data, cb).loss;
  double last = first;
  for (int i = 0; i < 99; ++i) last = car_train_step(m, opt, data, cb).loss;
  CHECK(last < 0.5 * first);
}

TEST_CASE("greedy decoding is deterministic and matches the low-temperature limit") {
  Rng rng(8);
  const CarConfig cfg = micro();
  const CarModel m(cfg, 10);
  const Tensor cb = random_codebook(cfg, rng);
  SamplingConfig greedy{1.0, 1, 1};
  const TokenSequence a = generate(m, cb, 2, greedy);
  greedy.seed = 99;
  const TokenSequence b = generate(m, cb, 2, greedy);
  CHECK(a.indices == b.indices);
  CHECK(a.indices.size() == cfg.geometry.channels);
  const TokenSequence cold = generate(m, cb, 2, SamplingConfig{1e-9, 0, 5});
  CHECK(cold.indices == a.indices);
  const TokenSequence warm1 = generate(m, cb, 2, SamplingConfig{1.0, 0, 5});
  const TokenSequence warm2 = generate(m, cb, 2, SamplingConfig{1.0, 0, 5});
  CHECK(warm1.indices == warm2.indices);
  CHECK_THROWS_AS(generate(m, cb, 2, SamplingConfig{0.0, 0, 1}), Error);
  CHECK_THROWS_AS(generate(m, cb, 2, SamplingConfig{1.0, 9, 1}), Error);
  CHECK_THROWS_AS(generate(m, cb, 3, SamplingConfig{1.0, 1, 1}), Error);
}

TEST_CASE("progressive decode keeps the first k codewords and zeroes the rest") {
  Rng rng(9);
  AutoencoderConfig ac;
  ac.image_height = 8;
  ac.image_width = 8;
  ac.image_channels = 1;
  ac.patch = 4;
  ac.hidden = 6;
  ac.latent_channels = 3;
  const Autoencoder ae(ac, 1);
  const Codebook cb(Axis::Channel, oracle::random_tensor({5, 4}, rng));
  const std::vector<std::size_t> tokens = {4, 1, 2, 0, 0, 3};
  const ImageBatch full = progressive_decode(tokens, 3, cb, ae);
  const ImageBatch ref = ae.decode(dequantize(tokens, cb, 2, 2, 2, 3));
  CHECK(full.pixels.to_vector() == ref.pixels.to_vector());
  std::vector<double> rows(6 * 4, 0.0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 4; ++j) rows[(b * 3) * 4 + j] = cb.entries()[tokens[b * 3] * 4 + j];
  const ImageBatch one = progressive_decode(tokens, 1, cb, ae);
  const ImageBatch one_ref = ae.decode(LatentGrid::from_channel_view(Tensor({6, 4}, rows), 2, 2, 2));
  CHECK(one.pixels.to_vector() == one_ref.pixels.to_vector());
  CHECK_THROWS_AS(progressive_decode(tokens, 0, cb, ae), Error);
  CHECK_THROWS_AS(progressive_decode(tokens, 4, cb, ae), Error);
}

TEST_CASE("sequence validation") {
  const CarConfig cfg = micro();
  TokenSequence s;
  s.indices = {1, 2};
  CHECK_THROWS_AS(s.validate(cfg.geometry), Error);
  s.indices.assign(6, 8);
  CHECK_THROWS_AS(s.validate(cfg.geometry), Error);
  CarConfig bad = micro();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
}
