#include "cvq/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <json.hpp>

#include "cvq/error.hpp"
#include "cvq/hashing.hpp"

namespace cvq {

using json = nlohmann::json;

namespace {

// Calls f(key, field, help) for every field in declaration order.
template <class C, class F>
void visit(C& c, F&& f) {
  f("seed", c.seed, "master seed; all RNG streams are derived from it");
  f("run_dir", c.run_dir, "output directory of the run");
  f("data_dir", c.data_dir, "dataset directory");
  f("corpus_kind", c.corpus_kind, "synthetic corpus kind: textures|shapes|mixed");
  f("corpus_count", c.corpus_count, "synthetic corpus size");
  f("image_height", c.image_height, "image height H");
  f("image_width", c.image_width, "image width W");
  f("image_channels", c.image_channels, "image channels (1 or 3)");
  f("classes", c.classes, "number of classes");
  f("axis", c.axis, "quantization axis: patch|channel");
  f("codebook_size", c.codebook_size, "codebook size N");
  f("latent_channels", c.latent_channels, "latent channels c");
  f("patch", c.patch, "downsample factor f");
  f("hidden", c.hidden, "autoencoder hidden width");
  f("blocks", c.blocks, "residual blocks per encoder/decoder");
  f("beta", c.beta, "commitment weight");
  f("alpha", c.alpha, "nested dropout ratio");
  f("eta", c.eta, "adversarial weight transition smoothness");
  f("lambda0", c.lambda0, "base adversarial weight");
  f("nested_dropout", c.nested_dropout, "enable the nested dropout objective");
  f("vq_dropout_compat", c.vq_dropout_compat, "allow channel truncation with the patch axis");
  f("lr", c.lr, "tokenizer learning rate");
  f("adam_beta1", c.adam_beta1, "tokenizer Adam beta1");
  f("adam_beta2", c.adam_beta2, "tokenizer Adam beta2");
  f("weight_decay", c.weight_decay, "tokenizer weight decay");
  f("steps", c.steps, "tokenizer training steps");
  f("batch_size", c.batch_size, "tokenizer batch size");
  f("usage_window", c.usage_window, "usage window in batches (0 = one epoch)");
  f("car_width", c.car_width, "transformer width d");
  f("car_layers", c.car_layers, "transformer layers");
  f("car_heads", c.car_heads, "attention heads");
  f("car_mlp_ratio", c.car_mlp_ratio, "MLP expansion ratio");
  f("car_index_embedding", c.car_index_embedding, "embed token indices instead of projecting codewords");
  f("car_lr", c.car_lr, "transformer learning rate");
  f("car_beta1", c.car_beta1, "transformer AdamW beta1");
  f("car_beta2", c.car_beta2, "transformer AdamW beta2");
  f("car_weight_decay", c.car_weight_decay, "transformer decoupled weight decay");
  f("car_steps", c.car_steps, "transformer training steps");
  f("car_batch_size", c.car_batch_size, "transformer batch size");
  f("car_target_accuracy", c.car_target_accuracy, "stop training once step accuracy reaches this");
  f("temperature", c.temperature, "sampling temperature");
  f("top_k", c.top_k, "top-k sampling (0 = whole codebook)");
  f("label", c.label, "class label for generation");
  f("num_samples", c.num_samples, "images to generate");
  f("sweep_channels", c.sweep_channels, "channel counts for the progressive sweep (empty = 1..c)");
  f("compare_axes", c.compare_axes, "axes of the comparison grid");
  f("compare_sizes", c.compare_sizes, "codebook sizes of the comparison grid");
  f("compare_eval_every", c.compare_eval_every, "steps between utilization samples");
  f("ablate_channel", c.ablate_channel, "channel to zero (1-based)");
  f("ablate_image", c.ablate_image, "validation image for the ablation");
  f("eval_images", c.eval_images, "validation images to evaluate (0 = all)");
  f("tokenizer_checkpoint", c.tokenizer_checkpoint, "tokenizer checkpoint directory");
  f("car_checkpoint", c.car_checkpoint, "transformer checkpoint directory");
  f("tokens_dir", c.tokens_dir, "directory of extracted tokens");
  f("resume", c.resume, "reserved; resuming is not implemented");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::Config,
          "key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::Config,
          "key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::Config, "key '" + key + "' expects true|false, got '" + v + "'");
}

struct ToText {
  std::string operator()(const std::size_t& v) const { return std::to_string(v); }
  std::string operator()(const double& v) const { return json(v).dump(); }
  std::string operator()(const bool& v) const { return v ? "true" : "false"; }
  std::string operator()(const std::string& v) const { return v; }
  std::string operator()(const std::vector<std::size_t>& v) const {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  }
  std::string operator()(const std::vector<std::string>& v) const {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  }
};

void from_text(const std::string& key, const std::string& v, std::size_t& f) { f = parse_size(key, v); }
void from_text(const std::string& key, const std::string& v, double& f) { f = parse_double(key, v); }
void from_text(const std::string& key, const std::string& v, bool& f) { f = parse_bool(key, v); }
void from_text(const std::string&, const std::string& v, std::string& f) { f = v; }
void from_text(const std::string& key, const std::string& v, std::vector<std::size_t>& f) {
  f.clear();
  for (const auto& s : split_list(v)) f.push_back(parse_size(key, s));
}
void from_text(const std::string&, const std::string& v, std::vector<std::string>& f) { f = split_list(v); }

template <class T>
void read_json(const std::string& key, const json& j, T& f) {
  try {
    if constexpr (std::is_same_v<T, std::size_t>) {
      require(j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0), ErrorKind::Config,
              "key '" + key + "' expects a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      require(j.is_number(), ErrorKind::Config, "key '" + key + "' expects a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      require(j.is_boolean(), ErrorKind::Config, "key '" + key + "' expects a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      require(j.is_string(), ErrorKind::Config, "key '" + key + "' expects a string");
    } else {
      require(j.is_array(), ErrorKind::Config, "key '" + key + "' expects an array");
    }
    f = j.get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "key '" + key + "': " + e.what());
  }
}

}  // namespace

std::string RunConfig::to_json() const {
  json j = json::object();
  visit(*this, [&j](const char* key, const auto& field, const char*) { j[key] = field; });
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::Config, "config must be a flat JSON object");
  RunConfig c;
  std::size_t known = 0;
  visit(c, [&](const char* key, auto& field, const char*) {
    if (auto it = j.find(key); it != j.end()) {
      read_json(key, *it, field);
      ++known;
    }
  });
  if (known != j.size()) {
    std::vector<std::string> keys;
    for (const auto& f : config_fields()) keys.push_back(f.key);
    for (auto it = j.begin(); it != j.end(); ++it) {
      require(std::find(keys.begin(), keys.end(), it.key()) != keys.end(), ErrorKind::Config,
              "unknown config key '" + it.key() + "'");
    }
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  visit(*this, [&](const char* k, auto& field, const char*) {
    if (key == k) {
      from_text(key, value, field);
      found = true;
    }
  });
  require(found, ErrorKind::Config, "unknown config key '" + key + "'");
}

std::string RunConfig::hash() const { return sha256_hex(to_json()); }

std::vector<ConfigField> config_fields() {
  std::vector<ConfigField> out;
  const RunConfig defaults;
  visit(defaults, [&out](const char* key, const auto& field, const char* help) {
    out.push_back({key, ToText{}(field), help});
  });
  return out;
}

void RunConfig::validate() const {
  autoencoder().validate();
  dropout().validate();
  parse_axis(axis);
  parse_corpus_kind(corpus_kind);
  require(codebook_size >= 1, ErrorKind::Config, "codebook_size must be positive");
  require(batch_size >= 1 && car_batch_size >= 1, ErrorKind::Config, "batch sizes must be positive");
  require(beta >= 0.0, ErrorKind::Config, "beta must be non-negative");
  require(lr > 0.0 && car_lr > 0.0, ErrorKind::Config, "learning rates must be positive");
  require(classes >= 1 && classes <= kMaxClasses, ErrorKind::Config,
          "classes must lie in [1, " + std::to_string(kMaxClasses) + "]");
  require(temperature > 0.0, ErrorKind::Config, "temperature must be positive");
  for (const auto& a : compare_axes) parse_axis(a);
  for (std::size_t n : sweep_channels) {
    require(n >= 1 && n <= latent_channels, ErrorKind::Config, "sweep channel count out of range");
  }
  require(!resume, ErrorKind::Config, "resume is reserved and not implemented");
  car().validate();
}

AutoencoderConfig RunConfig::autoencoder() const {
  AutoencoderConfig a;
  a.image_height = image_height;
  a.image_width = image_width;
  a.image_channels = image_channels;
  a.patch = patch;
  a.hidden = hidden;
  a.blocks = blocks;
  a.latent_channels = latent_channels;
  return a;
}

DropoutSchedule RunConfig::dropout() const { return {alpha, eta, lambda0, latent_channels}; }

AdamConfig RunConfig::tokenizer_optimizer() const {
  AdamConfig a;
  a.lr = lr;
  a.beta1 = adam_beta1;
  a.beta2 = adam_beta2;
  a.weight_decay = weight_decay;
  a.decoupled = false;
  return a;
}

AdamConfig RunConfig::car_optimizer() const {
  AdamConfig a;
  a.lr = car_lr;
  a.beta1 = car_beta1;
  a.beta2 = car_beta2;
  a.weight_decay = car_weight_decay;
  a.decoupled = true;
  return a;
}

CarConfig RunConfig::car() const {
  CarConfig c;
  c.geometry = {image_height / patch, image_width / patch, latent_channels, codebook_size};
  c.classes = classes;
  c.width = car_width;
  c.layers = car_layers;
  c.heads = car_heads;
  c.mlp_ratio = car_mlp_ratio;
  c.index_embedding = car_index_embedding;
  return c;
}

SamplingConfig RunConfig::sampling() const { return {temperature, top_k, seed}; }

CorpusSpec RunConfig::corpus() const {
  CorpusSpec s;
  s.kind = parse_corpus_kind(corpus_kind);
  s.count = corpus_count;
  s.height = image_height;
  s.width = image_width;
  s.channels = image_channels;
  s.classes = classes;
  s.seed = seed;
  return s;
}

}  // namespace cvq
