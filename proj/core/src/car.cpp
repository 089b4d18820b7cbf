#include "cvq/car.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvq/error.hpp"
#include "cvq/rng.hpp"

namespace cvq {

void TokenSequence::validate(const TokenGeometry& geometry) const {
  if (indices.size() != geometry.channels) {
    fail(ErrorKind::Shape,
         "token sequence length " + std::to_string(indices.size()) + " != c = " + std::to_string(geometry.channels));
  }
  for (std::size_t i : indices) {
    if (i >= geometry.codebook_size) {
      fail(ErrorKind::Value,
           "token index " + std::to_string(i) + " out of range for N = " + std::to_string(geometry.codebook_size));
    }
  }
}

void CarConfig::validate() const {
  require(geometry.channels >= 1 && geometry.codebook_size >= 1 && token_dim() >= 1, ErrorKind::Config,
          "token geometry must be positive");
  require(width > 0 && heads > 0 && width % heads == 0, ErrorKind::Config, "model width must be divisible by heads");
  require(classes >= 1 && mlp_ratio >= 1, ErrorKind::Config, "classes and mlp ratio must be positive");
}

Tensor LayerNormAffine::operator()(const Tensor& x) const {
  const Tensor y = layernorm(x);
  return y * expand(gain, y.shape()) + expand(bias, y.shape());
}

namespace {

Tensor small_normal(Shape shape, Rng& rng, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

LayerNormAffine make_ln(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

}  // namespace

CarModel::CarModel(const CarConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.width, c = config_.geometry.channels;
  proj1_ = Linear(config_.token_dim(), d, rng);
  proj2_ = Linear(d, d, rng);
  if (config_.index_embedding) index_table_ = small_normal({config_.geometry.codebook_size, d}, rng, 0.1);
  label_table_ = small_normal({config_.classes, d}, rng, 0.1);
  pos_emb_ = small_normal({c + 1, d}, rng, 0.1);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    TransformerBlock b;
    b.ln1 = make_ln(d);
    b.ln2 = make_ln(d);
    b.qkv = Linear(d, 3 * d, rng);
    b.proj = Linear(d, d, rng);
    b.fc1 = Linear(d, config_.mlp_ratio * d, rng);
    b.fc2 = Linear(config_.mlp_ratio * d, d, rng);
    blocks_.push_back(std::move(b));
  }
  ln_final_ = make_ln(d);
  // A small head keeps initial predictions close to uniform.
  head_ = Linear(d, config_.geometry.codebook_size, rng, 0.1);
}

Tensor CarModel::embed(std::span<const std::size_t> labels, std::span<const std::size_t> tokens, std::size_t batch,
                       std::size_t positions, const Tensor& codebook) const {
  const std::size_t d = config_.width;
  require(positions >= 1 && positions <= config_.geometry.channels + 1, ErrorKind::Shape, "too many positions");
  require(labels.size() == batch && tokens.size() == batch * (positions - 1), ErrorKind::Shape,
          "embedding input sizes do not match");
  for (std::size_t l : labels) {
    if (l >= config_.classes) fail(ErrorKind::Value, "label " + std::to_string(l) + " out of range");
  }
  Tensor x = reshape(index_rows(label_table_, labels), {batch, 1, d});
  if (positions > 1) {
    Tensor tok;
    if (config_.index_embedding) {
      tok = index_rows(index_table_, tokens);
    } else {
      require(codebook.rank() == 2 && codebook.dim(0) == config_.geometry.codebook_size &&
                  codebook.dim(1) == config_.token_dim(),
              ErrorKind::Shape, "codebook " + shape_str(codebook.shape()) + " does not match the model geometry");
      tok = proj2_(gelu(proj1_(index_rows(stop_gradient(codebook), tokens))));
    }
    x = concat({x, reshape(tok, {batch, positions - 1, d})}, 1);
  }
  return x + expand(slice(pos_emb_, 0, 0, positions), {batch, positions, d});
}

Tensor CarModel::run(const Tensor& x, std::size_t batch, std::size_t positions) const {
  const std::size_t d = config_.width, H = config_.heads, dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor h = reshape(x, {batch * positions, d});
  for (const auto& b : blocks_) {
    const Tensor qkv = permute(reshape(b.qkv(b.ln1(h)), {batch, positions, 3, H, dh}), {2, 0, 3, 1, 4});
    auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, 1), {batch * H, positions, dh}); };
    const Tensor att = causal_softmax(bmm(part(0), transpose(part(1))) * scale);
    const Tensor ctx = permute(reshape(bmm(att, part(2)), {batch, H, positions, dh}), {0, 2, 1, 3});
    h = h + b.proj(reshape(ctx, {batch * positions, d}));
    h = h + b.fc2(gelu(b.fc1(b.ln2(h))));
  }
  return head_(ln_final_(h));
}

Tensor CarModel::embed_sequence(const TokenSequence& seq, const Tensor& codebook) const {
  seq.validate(config_.geometry);
  const std::size_t labels[1] = {seq.label};
  return reshape(embed(labels, seq.indices, 1, config_.geometry.channels + 1, codebook),
                 {config_.geometry.channels + 1, config_.width});
}

Tensor CarModel::forward_logits(std::span<const TokenSequence> batch, const Tensor& codebook) const {
  require(!batch.empty(), ErrorKind::Shape, "empty batch");
  const std::size_t c = config_.geometry.channels;
  std::vector<std::size_t> labels, tokens;
  labels.reserve(batch.size());
  tokens.reserve(batch.size() * (c - 1));
  for (const auto& s : batch) {
    s.validate(config_.geometry);
    labels.push_back(s.label);
    tokens.insert(tokens.end(), s.indices.begin(), s.indices.end() - 1);
  }
  return run(embed(labels, tokens, batch.size(), c, codebook), batch.size(), c);
}

Tensor CarModel::forward_logits(const TokenSequence& seq, const Tensor& codebook) const {
  return forward_logits(std::span<const TokenSequence>(&seq, 1), codebook);
}

Tensor CarModel::prefix_logits(std::size_t label, std::span<const std::size_t> prefix, const Tensor& codebook) const {
  require(prefix.size() < config_.geometry.channels, ErrorKind::Shape, "prefix longer than c - 1");
  for (std::size_t i : prefix) {
    require(i < config_.geometry.codebook_size, ErrorKind::Value, "prefix token out of range");
  }
  const std::size_t labels[1] = {label};
  return run(embed(labels, prefix, 1, prefix.size() + 1, codebook), 1, prefix.size() + 1);
}

double CarModel::sequence_nll(const TokenSequence& seq, const Tensor& codebook) const {
  const Tensor lp = log_softmax(forward_logits(seq, codebook));
  const std::size_t N = config_.geometry.codebook_size;
  double nll = 0.0;
  for (std::size_t k = 0; k < seq.indices.size(); ++k) nll -= lp[k * N + seq.indices[k]];
  return nll;
}

std::vector<std::pair<std::string, Tensor>> CarModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto lin = [&out](const std::string& n, const Linear& l) {
    out.emplace_back(n + ".weight", l.weight);
    out.emplace_back(n + ".bias", l.bias);
  };
  auto ln = [&out](const std::string& n, const LayerNormAffine& l) {
    out.emplace_back(n + ".gain", l.gain);
    out.emplace_back(n + ".bias", l.bias);
  };
  if (config_.index_embedding) {
    out.emplace_back("token_table", index_table_);
  } else {
    lin("projector.fc1", proj1_);
    lin("projector.fc2", proj2_);
  }
  out.emplace_back("label_table", label_table_);
  out.emplace_back("pos_emb", pos_emb_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "block" + std::to_string(l);
    ln(p + ".ln1", blocks_[l].ln1);
    lin(p + ".qkv", blocks_[l].qkv);
    lin(p + ".proj", blocks_[l].proj);
    ln(p + ".ln2", blocks_[l].ln2);
    lin(p + ".fc1", blocks_[l].fc1);
    lin(p + ".fc2", blocks_[l].fc2);
  }
  ln("ln_final", ln_final_);
  lin("head", head_);
  return out;
}

std::vector<Tensor> CarModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

namespace {

double argmax_accuracy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  const std::size_t N = logits.dim(1);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const auto row = logits.data().subspan(r * N, N);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hit += best == targets[r];
  }
  return static_cast<double>(hit) / static_cast<double>(targets.size());
}

std::vector<std::size_t> flat_targets(std::span<const TokenSequence> batch) {
  std::vector<std::size_t> t;
  for (const auto& s : batch) t.insert(t.end(), s.indices.begin(), s.indices.end());
  return t;
}

}  // namespace

CarStepResult car_train_step(CarModel& model, Adam& optimizer, std::span<const TokenSequence> batch,
                             const Tensor& codebook) {
  optimizer.zero_grad();
  const Tensor logits = model.forward_logits(batch, codebook);
  const auto targets = flat_targets(batch);
  CarStepResult r;
  r.accuracy = argmax_accuracy(logits, targets);
  Tensor loss = cross_entropy(logits, targets);
  r.loss = loss.item();
  loss.backward();
  optimizer.step();
  return r;
}

double car_accuracy(const CarModel& model, std::span<const TokenSequence> batch, const Tensor& codebook) {
  return argmax_accuracy(model.forward_logits(batch, codebook), flat_targets(batch));
}

TokenSequence generate(const CarModel& model, const Tensor& codebook, std::size_t label,
                       const SamplingConfig& sampling) {
  const auto& geo = model.config().geometry;
  const std::size_t N = geo.codebook_size;
  const std::size_t k = sampling.top_k == 0 ? N : sampling.top_k;
  require(sampling.temperature > 0.0, ErrorKind::Value, "temperature must be positive");
  require(k >= 1 && k <= N, ErrorKind::Value, "top_k must lie in [1, N]");
  require(label < model.config().classes, ErrorKind::Value, "label out of range");
  Rng rng(sampling.seed);
  TokenSequence seq;
  seq.label = label;
  std::vector<std::size_t> order(N);
  std::vector<double> prob(k);
  for (std::size_t pos = 0; pos < geo.channels; ++pos) {
    const Tensor logits = model.prefix_logits(label, seq.indices, codebook);
    const auto row = logits.data().subspan(pos * N, N);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    const double top = row[order[0]] / sampling.temperature;
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += (prob[i] = std::exp(row[order[i]] / sampling.temperature - top));
    const double u = rng.uniform() * z;
    std::size_t pick = k - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      acc += prob[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    seq.indices.push_back(order[pick]);
  }
  return seq;
}

ImageBatch progressive_decode(std::span<const std::size_t> tokens, std::size_t k, const Codebook& codebook,
                              const Autoencoder& decoder) {
  const auto& cfg = decoder.config();
  const std::size_t c = cfg.latent_channels, hw = cfg.grid_height() * cfg.grid_width();
  require(codebook.axis() == Axis::Channel && codebook.dim() == hw, ErrorKind::Shape,
          "progressive decode needs a channel codebook of dim h*w");
  require(k >= 1 && k <= c, ErrorKind::Value, "k = " + std::to_string(k) + " outside [1, " + std::to_string(c) + "]");
  require(!tokens.empty() && tokens.size() % c == 0, ErrorKind::Shape, "token count is not a multiple of c");
  const std::size_t B = tokens.size() / c;
  std::vector<double> rows(B * c * hw, 0.0);
  const auto e = codebook.entries().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t idx = tokens[b * c + j];
      require(idx < codebook.size(), ErrorKind::Value, "token index out of range");
      std::copy_n(e.data() + idx * hw, hw, rows.data() + (b * c + j) * hw);
    }
  }
  const LatentGrid grid = LatentGrid::from_channel_view(Tensor({B * c, hw}, std::move(rows)), B, cfg.grid_height(),
                                                        cfg.grid_width());
  return decoder.decode(grid);
}

}  // namespace cvq
