#include "cvq/checkpoint.hpp"

#include <json.hpp>

#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/ntb.hpp"

namespace cvq {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json write_tensors(const fs::path& dir, const std::vector<std::pair<std::string, Tensor>>& named) {
  json list = json::array();
  for (const auto& [name, t] : named) {
    const std::string file = name + ".ntb";
    ntb::write(dir / file, t);
    list.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}, {"content_id", git_blob_id(dir / file)}});
  }
  return list;
}

json read_manifest(const fs::path& dir, const std::string& kind) {
  require(fs::is_regular_file(dir / "manifest.json"), ErrorKind::Io,
          "no checkpoint manifest in '" + dir.string() + "'");
  json m;
  try {
    m = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, "unreadable checkpoint manifest: " + std::string(e.what()));
  }
  require(m.value("kind", "") == kind, ErrorKind::Value,
          "'" + dir.string() + "' is not a " + kind + " checkpoint");
  return m;
}

void load_into(const fs::path& dir, const json& manifest, const std::vector<std::pair<std::string, Tensor>>& named) {
  std::map<std::string, std::string> files;
  for (const auto& rec : manifest.at("tensors")) files[rec.at("name").get<std::string>()] = rec.at("file");
  require(files.size() == named.size(), ErrorKind::Shape, "checkpoint tensor count does not match the model");
  for (auto [name, t] : named) {
    const auto it = files.find(name);
    require(it != files.end(), ErrorKind::Shape, "checkpoint is missing tensor '" + name + "'");
    const Tensor loaded = ntb::read(dir / it->second);
    require(loaded.shape() == t.shape(), ErrorKind::Shape,
            "tensor '" + name + "' has shape " + shape_str(loaded.shape()) + ", model expects " +
                shape_str(t.shape()));
    std::copy(loaded.data().begin(), loaded.data().end(), t.mutable_data().begin());
  }
}

void write_manifest(const fs::path& dir, json manifest, const RunConfig& config, std::size_t step) {
  manifest["step"] = step;
  manifest["config"] = json::parse(config.to_json());
  manifest["config_hash"] = config.hash();
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

void save_tokenizer_checkpoint(const fs::path& dir, const Autoencoder& model, const Codebook& codebook,
                               const RunConfig& config, std::size_t step) {
  fs::create_directories(dir);
  json m;
  m["kind"] = "tokenizer";
  m["tensors"] = write_tensors(dir, model.named_parameters());
  ntb::write(dir / "codebook.ntb", codebook.entries());
  m["codebook"] = {{"file", "codebook.ntb"},
                   {"axis", axis_name(codebook.axis())},
                   {"size", codebook.size()},
                   {"dim", codebook.dim()},
                   {"content_id", git_blob_id(dir / "codebook.ntb")}};
  write_manifest(dir, m, config, step);
}

TokenizerCheckpoint load_tokenizer_checkpoint(const fs::path& dir) {
  const json m = read_manifest(dir, "tokenizer");
  try {
    const RunConfig config = RunConfig::from_json(m.at("config").dump());
    Autoencoder model(config.autoencoder(), 0);
    load_into(dir, m, model.named_parameters());
    const json& cb = m.at("codebook");
    Tensor entries = ntb::read(dir / cb.at("file").get<std::string>());
    require(entries.rank() == 2 && entries.dim(0) == cb.at("size").get<std::size_t>() &&
                entries.dim(1) == cb.at("dim").get<std::size_t>(),
            ErrorKind::Shape, "codebook file does not match its manifest entry");
    Codebook codebook(parse_axis(cb.at("axis")), Tensor(entries.shape(), entries.to_vector(), true));
    return TokenizerCheckpoint{config, std::move(model), std::move(codebook), m.at("step").get<std::size_t>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

void save_car_checkpoint(const fs::path& dir, const CarModel& model, const RunConfig& config, std::size_t step) {
  fs::create_directories(dir);
  json m;
  m["kind"] = "car";
  m["tensors"] = write_tensors(dir, model.named_parameters());
  write_manifest(dir, m, config, step);
}

CarCheckpoint load_car_checkpoint(const fs::path& dir) {
  const json m = read_manifest(dir, "car");
  try {
    const RunConfig config = RunConfig::from_json(m.at("config").dump());
    CarModel model(config.car(), 0);
    load_into(dir, m, model.named_parameters());
    return CarCheckpoint{config, std::move(model), m.at("step").get<std::size_t>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

std::string checkpoint_content_id(const fs::path& dir) { return git_blob_id(dir / "manifest.json"); }

}  // namespace cvq
