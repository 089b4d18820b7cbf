#include <doctest.h>

#include <filesystem>
#include <map>

#include "cvq/datasets.hpp"
#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/image_io.hpp"
#include "cvq/ntb.hpp"

using namespace cvq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvq_test_datasets_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = sha256_file(e.path());
  return out;
}

}  // namespace

TEST_CASE("corpus generation replays bitwise") {
  CorpusSpec spec;
  spec.count = 1200;
  spec.seed = 4;
  const fs::path a = scratch("a"), b = scratch("b");
  generate_corpus(spec, a);
  generate_corpus(spec, b);
  const auto ha = hashes(a), hb = hashes(b);
  CHECK(ha.size() == 5);
  CHECK(ha == hb);
  spec.seed = 5;
  const fs::path c = scratch("c");
  generate_corpus(spec, c);
  CHECK(hashes(c).at("manifest.json") != ha.at("manifest.json"));
}

TEST_CASE("empty corpus writes only a manifest") {
  CorpusSpec spec;
  spec.count = 0;
  const fs::path d = scratch("empty");
  generate_corpus(spec, d);
  CHECK(hashes(d).size() == 1);
  const Dataset ds = Dataset::load(d);
  CHECK(ds.size() == 0);
}

TEST_CASE("labels are round-robin and splits are disjoint and exhaustive") {
  CorpusSpec spec;
  spec.count = 103;
  const fs::path d = scratch("split");
  generate_corpus(spec, d);
  const Dataset ds = Dataset::load(d);
  std::vector<int> hist(10, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) ++hist[ds.label(i)];
  const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
  CHECK(*hi - *lo <= 1);
  std::vector<std::size_t> all = ds.train_ids();
  all.insert(all.end(), ds.val_ids().begin(), ds.val_ids().end());
  std::sort(all.begin(), all.end());
  CHECK(all.size() == 103);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  CHECK(ds.train_ids().size() == 92);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (double p : ds.pixels(i)) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("rendering is a pure function of corpus settings and index") {
  CorpusSpec spec;
  std::size_t l1 = 0, l2 = 0;
  const Image a = render_corpus_image(spec, 17, &l1), b = render_corpus_image(spec, 17, &l2);
  CHECK(a.pixels == b.pixels);
  CHECK(l1 == 7);
  CHECK(render_corpus_image(spec, 18).pixels != a.pixels);
}

TEST_CASE("corrupted shard is detected on load") {
  CorpusSpec spec;
  spec.count = 10;
  const fs::path d = scratch("corrupt");
  generate_corpus(spec, d);
  std::string bytes = read_file(d / "images_000.ntb");
  bytes[bytes.size() - 1] ^= 0x01;
  write_file(d / "images_000.ntb", bytes);
  CHECK_THROWS_AS(Dataset::load(d), Error);
}

TEST_CASE("ingestion: replication resize, identity crop, pixel round trip, failures listed") {
  const fs::path in = scratch("ingest_in"), out = scratch("ingest_out");
  Image one{1, 1, 3, {0.2, 0.4, 0.6}};
  write_pnm(in / "a_one.ppm", one);
  Image full{4, 4, 3, {}};
  for (std::size_t i = 0; i < 48; ++i) full.pixels.push_back(static_cast<double>((i * 37) % 256) / 255.0);
  write_pnm(in / "b_full.ppm", full);
  write_file(in / "c_bad.ppm", "P6\n4 4\n255\nxx");
  const IngestSummary s = ingest_directory(in, out, 4, 4, 3);
  CHECK(s.ingested == 2);
  REQUIRE(s.failed.size() == 1);
  CHECK(s.failed[0].rfind("c_bad.ppm", 0) == 0);
  const Dataset ds = Dataset::load(out);
  CHECK(ds.size() == 2);
  const Image rep = ds.image(0);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) CHECK(rep.at(y, x, c) == read_pnm(in / "a_one.ppm").at(0, 0, c));
  // Round trip: PPM -> NTB -> PPM bytes.
  write_pnm(out / "back.ppm", ds.image(1));
  CHECK(read_file(out / "back.ppm") == read_file(in / "b_full.ppm"));
  CHECK(center_crop(full, 4, 4).pixels == full.pixels);
  CHECK(box_resize(full, 4, 4).pixels == full.pixels);
}

TEST_CASE("box resize averages areas") {
  const Image img{2, 2, 1, {0.0, 1.0, 0.5, 0.5}};
  CHECK(box_resize(img, 1, 1).pixels[0] == doctest::Approx(0.5));
  const Image wide{1, 3, 1, {0.0, 0.3, 0.9}};
  CHECK(box_resize(wide, 1, 2).pixels[0] == doctest::Approx((0.0 + 0.5 * 0.3) / 1.5));
}

TEST_CASE("pnm parsing handles ascii, comments and 16-bit maxval") {
  const Image a = parse_pnm("P2\n# c\n2 1\n10\n0 10\n");
  CHECK(a.pixels == std::vector<double>{0.0, 1.0});
  std::string p5 = "P5 1 1 65535\n";
  p5 += static_cast<char>(0x80);
  p5 += static_cast<char>(0x00);
  CHECK(parse_pnm(p5).pixels[0] == doctest::Approx(32768.0 / 65535.0));
  CHECK_THROWS_AS(parse_pnm("P7\n"), Error);
}

TEST_CASE("ntb round trip and corrupt headers") {
  const Tensor t({2, 3}, {1.5, -2, 3, 4, 5e-300, 6});
  const std::string bytes = ntb::encode(t.shape(), t.data());
  CHECK(bytes.substr(0, 8) == "CVQTNSR1");
  CHECK(bytes.size() == 8 + 4 + 2 * 8 + 6 * 8);
  Shape s;
  std::vector<double> v;
  ntb::decode(bytes, s, v);
  CHECK(s == t.shape());
  CHECK(v == t.to_vector());
  CHECK_THROWS_AS(ntb::decode("CVQTNSR2" + bytes.substr(8), s, v), Error);
  CHECK_THROWS_AS(ntb::decode(bytes.substr(0, bytes.size() - 1), s, v), Error);
}
