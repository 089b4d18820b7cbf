#include <doctest.h>

#include <filesystem>

#include "cvq/checkpoint.hpp"
#include "cvq/config.hpp"
#include "cvq/error.hpp"
#include "cvq/rng.hpp"

using namespace cvq;
namespace fs = std::filesystem;

TEST_CASE("config json round trip is exact") {
  RunConfig c;
  c.seed = 99;
  c.lr = 0.1 + 0.2;
  c.compare_sizes = {8, 16};
  c.sweep_channels = {1, 3};
  c.compare_axes = {"channel"};
  c.nested_dropout = false;
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back == c);
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(RunConfig{}.hash() != c.hash());
}

TEST_CASE("unknown and mistyped keys are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json(R"({"sed": 1})"), Error);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"seed": "one"})"), Error);
  CHECK_THROWS_AS(RunConfig::from_json("{"), Error);
  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), Error);
  CHECK_THROWS_AS(c.set("steps", "many"), Error);
  CHECK_THROWS_AS(c.set("nested_dropout", "maybe"), Error);
}

TEST_CASE("partial json keeps defaults") {
  const RunConfig c = RunConfig::from_json(R"({"codebook_size": 64})");
  RunConfig d;
  d.codebook_size = 64;
  CHECK(c == d);
}

TEST_CASE("set parses text forms") {
  RunConfig c;
  c.set("lr", "1e-4");
  c.set("nested_dropout", "false");
  c.set("compare_sizes", "64,256");
  c.set("axis", "patch");
  c.set("seed", "18446744073709551615");
  CHECK(c.lr == 1e-4);
  CHECK_FALSE(c.nested_dropout);
  CHECK(c.compare_sizes == std::vector<std::size_t>{64, 256});
  CHECK(c.quant_axis() == Axis::Patch);
  CHECK(c.seed == 18446744073709551615ull);
}

TEST_CASE("validation catches inconsistent settings") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto edit) {
    RunConfig x;
    edit(x);
    CHECK_THROWS_AS(x.validate(), Error);
  };
  bad([](RunConfig& x) { x.image_height = 30; });
  bad([](RunConfig& x) { x.alpha = 1.5; });
  bad([](RunConfig& x) { x.axis = "diagonal"; });
  bad([](RunConfig& x) { x.codebook_size = 0; });
  bad([](RunConfig& x) { x.car_width = 130; });
  bad([](RunConfig& x) { x.resume = true; });
}

TEST_CASE("every field has a listed default") {
  const auto fields = config_fields();
  CHECK(fields.size() > 50);
  RunConfig c;
  for (const auto& f : fields) CHECK_NOTHROW(c.set(f.key, f.default_value));
  CHECK(c == RunConfig{});
}

TEST_CASE("tokenizer checkpoint round trip restores parameters bitwise") {
  RunConfig c;
  c.image_height = c.image_width = 16;
  c.patch = 4;
  c.latent_channels = 8;
  c.hidden = 16;
  c.codebook_size = 12;
  Autoencoder model(c.autoencoder(), 3);
  Rng rng(4);
  std::vector<double> e(12 * 16);
  for (auto& v : e) v = rng.normal();
  Codebook cb(Axis::Channel, Tensor({12, 16}, e));
  const fs::path dir = fs::temp_directory_path() / "cvq_test_config_ckpt";
  fs::remove_all(dir);
  save_tokenizer_checkpoint(dir, model, cb, c, 17);
  const TokenizerCheckpoint back = load_tokenizer_checkpoint(dir);
  CHECK(back.config == c);
  CHECK(back.step == 17);
  CHECK(back.codebook.entries().to_vector() == e);
  const auto a = model.named_parameters(), b = back.model.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.to_vector() == b[i].second.to_vector());
  }
  const std::string id = checkpoint_content_id(dir);
  CHECK(id.size() == 40);
  const fs::path dir2 = fs::temp_directory_path() / "cvq_test_config_ckpt2";
  fs::remove_all(dir2);
  save_tokenizer_checkpoint(dir2, back.model, back.codebook, back.config, back.step);
  CHECK(checkpoint_content_id(dir2) == id);
}

TEST_CASE("car checkpoint round trip") {
  RunConfig c;
  c.image_height = c.image_width = 16;
  c.patch = 4;
  c.latent_channels = 8;
  c.codebook_size = 12;
  c.car_width = 16;
  c.car_layers = 1;
  c.car_heads = 2;
  CarModel m(c.car(), 5);
  const fs::path dir = fs::temp_directory_path() / "cvq_test_config_car";
  fs::remove_all(dir);
  save_car_checkpoint(dir, m, c, 3);
  const CarCheckpoint back = load_car_checkpoint(dir);
  CHECK(back.step == 3);
  const auto a = m.named_parameters(), b = back.model.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second.to_vector() == b[i].second.to_vector());
  CHECK_THROWS_AS(load_tokenizer_checkpoint(dir), Error);
}
