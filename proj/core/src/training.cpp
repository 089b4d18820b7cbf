#include "cvq/training.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/ntb.hpp"

namespace cvq {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string tokenizer_log_header() {
  return "step,branch,c_keep,lambda_gan,total,reconstruction,codebook,commitment,perceptual,adversarial,"
         "batch_distinct,lifetime_utilization,window_utilization\n";
}

std::string tokenizer_log_row(const TokenizerStepLog& l) {
  std::string s = std::to_string(l.step) + "," + l.branch + "," + std::to_string(l.c_keep);
  for (double v : {l.lambda_gan, l.total, l.reconstruction, l.codebook, l.commitment, l.perceptual, l.adversarial}) {
    s += "," + csv_number(v);
  }
  s += "," + std::to_string(l.batch_distinct) + "," + csv_number(l.lifetime_utilization) + "," +
       csv_number(l.window_utilization) + "\n";
  return s;
}

// ---------------------------------------------------------------- batches

BatchSampler::BatchSampler(std::vector<std::size_t> ids, std::size_t batch, std::uint64_t seed)
    : ids_(std::move(ids)), batch_(std::min(batch, ids_.size())), rng_(seed) {
  require(!ids_.empty(), ErrorKind::Value, "no samples to draw batches from");
  require(batch >= 1, ErrorKind::Config, "batch size must be positive");
  shuffle();
}

void BatchSampler::shuffle() {
  for (std::size_t i = ids_.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i)));
    std::swap(ids_[i], ids_[j]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_ > ids_.size()) shuffle();
  std::vector<std::size_t> out(ids_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               ids_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

ImageBatch make_batch(const Dataset& data, std::span<const std::size_t> ids) {
  return ImageBatch::from_pixels(ids.size(), data.height(), data.width(), data.channels(), data.gather(ids));
}

// ---------------------------------------------------------------- tokenizer

namespace {

void check_geometry(const AutoencoderConfig& cfg, const Dataset& data) {
  require(cfg.image_height == data.height() && cfg.image_width == data.width() &&
              cfg.image_channels == data.channels(),
          ErrorKind::Shape,
          "dataset images are " + std::to_string(data.height()) + "x" + std::to_string(data.width()) + "x" +
              std::to_string(data.channels()) + " but the model expects " + std::to_string(cfg.image_height) + "x" +
              std::to_string(cfg.image_width) + "x" + std::to_string(cfg.image_channels));
}

}  // namespace

TokenizerTrainer::TokenizerTrainer(const RunConfig& config, const Dataset& data, LossHooks hooks)
    : config_(config),
      data_(data),
      hooks_(std::move(hooks)),
      model_((config.validate(), config.autoencoder()), Rng::derive(config.seed, kSeedTokenizerInit)),
      sampler_(data.train_ids(), config.batch_size, Rng::derive(config.seed, kSeedBatches)),
      dropout_rng_(Rng::derive(config.seed, kSeedDropout)) {
  check_geometry(model_.config(), data_);
  const Axis axis = config_.quant_axis();
  require(axis == Axis::Channel || !config_.nested_dropout || config_.alpha == 0.0 || config_.vq_dropout_compat,
          ErrorKind::Config,
          "nested channel dropout with the patch axis needs vq_dropout_compat (or alpha 0 / nested_dropout false)");
  pending_ = sampler_.next();
  const LatentGrid z = model_.encode(make_batch(data_, pending_));
  const Tensor tokens = stop_gradient(axis == Axis::Patch ? z.patch_view() : z.channel_view());
  Rng init_rng(Rng::derive(config_.seed, kSeedCodebookInit));
  codebook_.emplace(Codebook::from_tokens(axis, config_.codebook_size, tokens, init_rng));
  std::vector<Tensor> params = model_.parameters();
  params.push_back(codebook_->entries());
  optimizer_.emplace(std::move(params), config_.tokenizer_optimizer());
}

std::size_t TokenizerTrainer::usage_window() const {
  return config_.usage_window > 0 ? config_.usage_window : std::max<std::size_t>(1, sampler_.batches_per_epoch());
}

TokenizerStepLog TokenizerTrainer::step() {
  std::vector<std::size_t> ids = pending_.empty() ? sampler_.next() : std::move(pending_);
  pending_.clear();
  const ImageBatch x = make_batch(data_, ids);
  const DropoutSchedule schedule = config_.dropout();
  NestedLossResult r =
      config_.nested_dropout
          ? hybrid_step_loss(x, *codebook_, schedule, model_, config_.beta, dropout_rng_, hooks_,
                             config_.vq_dropout_compat)
          : full_loss(x, model_.encode(x), *codebook_, schedule, model_, config_.beta, hooks_);
  r.loss.total.backward();
  optimizer_->step();
  optimizer_->zero_grad();
  codebook_->usage().record(r.indices);
  ++steps_;

  TokenizerStepLog log;
  log.step = steps_;
  log.branch = r.keep.branch();
  log.c_keep = r.keep.c_keep;
  log.lambda_gan = r.lambda_gan;
  log.total = r.loss.total.item();
  log.reconstruction = r.loss.reconstruction;
  log.codebook = r.loss.codebook;
  log.commitment = r.loss.commitment;
  log.perceptual = r.loss.perceptual;
  log.adversarial = r.loss.adversarial;
  const UsageStats life = usage_stats(codebook_->usage(), 0);
  log.batch_distinct = life.per_batch_distinct;
  log.lifetime_utilization = life.utilization;
  log.window_utilization = usage_stats(codebook_->usage(), usage_window()).utilization;
  return log;
}

// ---------------------------------------------------------------- evaluation

namespace {

template <class F>
void for_chunks(std::span<const std::size_t> ids, std::size_t chunk, F&& f) {
  require(!ids.empty(), ErrorKind::Value, "no images to evaluate");
  require(chunk >= 1, ErrorKind::Value, "chunk size must be positive");
  for (std::size_t s = 0; s < ids.size(); s += chunk) f(ids.subspan(s, std::min(chunk, ids.size() - s)));
}

}  // namespace

TokenizerEval evaluate_tokenizer(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                                 std::span<const std::size_t> ids, std::size_t chunk) {
  check_geometry(model.config(), data);
  TokenizerEval ev;
  std::vector<bool> used(codebook.size(), false);
  double n = 0.0;
  for_chunks(ids, chunk, [&](std::span<const std::size_t> part) {
    const ImageBatch x = make_batch(data, part);
    const LatentGrid z = model.encode(x);
    const LookupResult lk = lookup(codebook.axis() == Axis::Patch ? z.patch_view() : z.channel_view(), codebook);
    for (std::size_t i : lk.indices) used[i] = true;
    const LatentGrid zq = dequantize(lk.indices, codebook, z.batch(), z.height(), z.width(), z.channels());
    const ImageMetrics m = batch_metrics(x, clamp01(model.decode(zq)));
    const double w = static_cast<double>(part.size());
    ev.metrics.mse += m.mse * w;
    ev.metrics.psnr += m.psnr * w;
    ev.metrics.ssim += m.ssim * w;
    n += w;
  });
  ev.metrics.mse /= n;
  ev.metrics.psnr /= n;
  ev.metrics.ssim /= n;
  ev.distinct = static_cast<std::size_t>(std::count(used.begin(), used.end(), true));
  ev.utilization = static_cast<double>(ev.distinct) / static_cast<double>(codebook.size());
  return ev;
}

std::vector<TokenSequence> extract_tokens(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                                          std::span<const std::size_t> ids, std::size_t chunk) {
  require(codebook.axis() == Axis::Channel, ErrorKind::Value, "token sequences need a channel-axis codebook");
  check_geometry(model.config(), data);
  const std::size_t c = model.config().latent_channels;
  std::vector<TokenSequence> out;
  for_chunks(ids, chunk, [&](std::span<const std::size_t> part) {
    const LookupResult lk = lookup(model.encode(make_batch(data, part)).channel_view(), codebook);
    for (std::size_t b = 0; b < part.size(); ++b) {
      TokenSequence s;
      s.indices.assign(lk.indices.begin() + static_cast<std::ptrdiff_t>(b * c),
                       lk.indices.begin() + static_cast<std::ptrdiff_t>((b + 1) * c));
      s.label = data.label(part[b]);
      out.push_back(std::move(s));
    }
  });
  return out;
}

double truncated_mse(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                     std::span<const std::size_t> ids, std::size_t c_keep, std::size_t chunk) {
  double total = 0.0, n = 0.0;
  const std::size_t c = model.config().latent_channels;
  for_chunks(ids, chunk, [&](std::span<const std::size_t> part) {
    const std::vector<TokenSequence> seqs = extract_tokens(model, codebook, data, part, chunk);
    std::vector<std::size_t> flat;
    flat.reserve(seqs.size() * c);
    for (const auto& s : seqs) flat.insert(flat.end(), s.indices.begin(), s.indices.end());
    const ImageBatch x = make_batch(data, part);
    const ImageMetrics m = batch_metrics(x, clamp01(progressive_decode(flat, c_keep, codebook, model)));
    total += m.mse * static_cast<double>(part.size());
    n += static_cast<double>(part.size());
  });
  return total / n;
}

// ---------------------------------------------------------------- token sets

void write_token_set(const fs::path& dir, std::span<const TokenSequence> sequences, const Codebook& codebook,
                     const TokenGeometry& geometry) {
  require(codebook.axis() == Axis::Channel && codebook.size() == geometry.codebook_size &&
              codebook.dim() == geometry.height * geometry.width,
          ErrorKind::Shape, "codebook does not match the token geometry");
  fs::create_directories(dir);
  std::vector<std::size_t> flat, labels;
  for (const auto& s : sequences) {
    s.validate(geometry);
    flat.insert(flat.end(), s.indices.begin(), s.indices.end());
    labels.push_back(s.label);
  }
  ntb::write_indices(dir / "tokens.ntb", {sequences.size(), geometry.channels}, flat);
  ntb::write_indices(dir / "labels.ntb", {sequences.size()}, labels);
  ntb::write(dir / "codebook.ntb", codebook.entries());
  json m = {{"count", sequences.size()},
            {"height", geometry.height},
            {"width", geometry.width},
            {"channels", geometry.channels},
            {"codebook_size", geometry.codebook_size},
            {"tokens_sha256", sha256_file(dir / "tokens.ntb")},
            {"labels_sha256", sha256_file(dir / "labels.ntb")},
            {"codebook_sha256", sha256_file(dir / "codebook.ntb")}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

TokenSet read_token_set(const fs::path& dir) {
  require(fs::is_regular_file(dir / "manifest.json"), ErrorKind::Io, "no token manifest in '" + dir.string() + "'");
  TokenSet set;
  try {
    const json m = json::parse(read_file(dir / "manifest.json"));
    set.geometry = {m.at("height"), m.at("width"), m.at("channels"), m.at("codebook_size")};
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, "malformed token manifest: " + std::string(e.what()));
  }
  Shape ts, ls;
  const auto flat = ntb::read_indices(dir / "tokens.ntb", &ts);
  const auto labels = ntb::read_indices(dir / "labels.ntb", &ls);
  require(ts.size() == 2 && ts[1] == set.geometry.channels && ls.size() == 1 && ls[0] == ts[0], ErrorKind::Shape,
          "token and label files do not agree");
  for (std::size_t i = 0; i < ts[0]; ++i) {
    TokenSequence s;
    s.indices.assign(flat.begin() + static_cast<std::ptrdiff_t>(i * ts[1]),
                     flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * ts[1]));
    s.label = labels[i];
    s.validate(set.geometry);
    set.sequences.push_back(std::move(s));
  }
  set.codebook = ntb::read(dir / "codebook.ntb");
  require(set.codebook.rank() == 2 && set.codebook.dim(0) == set.geometry.codebook_size &&
              set.codebook.dim(1) == set.geometry.height * set.geometry.width,
          ErrorKind::Shape, "token codebook does not match the manifest");
  return set;
}

// ---------------------------------------------------------------- transformer

namespace {

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

CarTrainer::CarTrainer(const RunConfig& config, std::vector<TokenSequence> sequences, Tensor codebook)
    : config_(config),
      sequences_(std::move(sequences)),
      codebook_(stop_gradient(codebook)),
      model_((config.validate(), config.car()), Rng::derive(config.seed, kSeedCarInit)),
      optimizer_(model_.parameters(), config.car_optimizer()),
      sampler_(iota_ids(sequences_.size()), config.car_batch_size, Rng::derive(config.seed, kSeedBatches)) {
  const auto& g = model_.config().geometry;
  require(codebook_.rank() == 2 && codebook_.dim(0) == g.codebook_size && codebook_.dim(1) == g.height * g.width,
          ErrorKind::Shape, "codebook " + shape_str(codebook_.shape()) + " does not match the configured geometry");
  for (const auto& s : sequences_) s.validate(g);
}

CarStepResult CarTrainer::step() {
  const auto ids = sampler_.next();
  std::vector<TokenSequence> batch;
  batch.reserve(ids.size());
  for (std::size_t i : ids) batch.push_back(sequences_[i]);
  ++steps_;
  return car_train_step(model_, optimizer_, batch, codebook_);
}

}  // namespace cvq
