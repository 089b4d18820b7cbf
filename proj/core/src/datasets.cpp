#include "cvq/datasets.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/ntb.hpp"
#include "cvq/rng.hpp"

namespace cvq {

using json = nlohmann::json;

std::string corpus_kind_name(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::Textures: return "textures";
    case CorpusKind::Shapes: return "shapes";
    case CorpusKind::Mixed: return "mixed";
  }
  return "mixed";
}

CorpusKind parse_corpus_kind(const std::string& name) {
  if (name == "textures") return CorpusKind::Textures;
  if (name == "shapes") return CorpusKind::Shapes;
  if (name == "mixed") return CorpusKind::Mixed;
  fail(ErrorKind::Config, "unknown corpus kind '" + name + "' (expected textures|shapes|mixed)");
}

namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

// Shape membership in normalised coordinates centred on the shape.
bool inside_shape(std::size_t family, double x, double y) {
  const double ax = std::abs(x), ay = std::abs(y);
  const double r = std::sqrt(x * x + y * y);
  switch (family) {
    case 0: return r < 1.0;                                          // disk
    case 1: return std::max(ax, ay) < 0.85;                          // square
    case 2: return y > -0.8 && y < 0.8 && ax < 0.55 * (y + 0.8);     // triangle
    case 3: return r < 1.0 && r > 0.55;                              // ring
    case 4: return (ax < 0.3 && ay < 1.0) || (ay < 0.3 && ax < 1.0); // cross
    case 5: return ax + ay < 1.0;                                    // diamond
    case 6: return ay < 0.35 && ax < 1.0;                            // horizontal bar
    case 7: return ax < 0.35 && ay < 1.0;                            // vertical bar
    case 8: return x * x + 4.0 * y * y < 1.0;                        // ellipse
    default: return std::max(ax, ay) < 1.0 && std::max(ax, ay) > 0.65;  // frame
  }
}

struct Texture {
  std::size_t family = 0;
  Color a{}, b{};
  double freq = 1.0, phase = 0.0, angle = 0.0;
  std::array<double, 25> noise{};
};

Texture random_texture(Rng& rng, std::size_t family) {
  Texture t;
  t.family = family;
  t.a = random_color(rng);
  t.b = random_color(rng);
  t.freq = rng.uniform(2.0, 6.0);
  t.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  t.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (auto& v : t.noise) v = rng.uniform();
  return t;
}

// Mixing weight in [0, 1] at normalised position (u, v) in [0, 1)^2.
double texture_mix(const Texture& t, double u, double v) {
  constexpr double kTau = 2.0 * std::numbers::pi;
  switch (t.family) {
    case 0: return 0.0;
    case 1: return std::sin(kTau * t.freq * v + t.phase) > 0.0 ? 1.0 : 0.0;
    case 2: return std::sin(kTau * t.freq * u + t.phase) > 0.0 ? 1.0 : 0.0;
    case 3: return std::sin(kTau * t.freq * (u + v) / std::numbers::sqrt2 + t.phase) > 0.0 ? 1.0 : 0.0;
    case 4: {
      const auto cu = static_cast<long>(std::floor(u * t.freq));
      const auto cv = static_cast<long>(std::floor(v * t.freq));
      return ((cu + cv) % 2 == 0) ? 1.0 : 0.0;
    }
    case 5: return std::clamp(0.5 + 0.5 * (std::cos(t.angle) * (u - 0.5) + std::sin(t.angle) * (v - 0.5)) * 2.0, 0.0, 1.0);
    case 6: return std::clamp(std::sqrt((u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5)) * 1.6, 0.0, 1.0);
    case 7: {
      const double gx = u * 4.0, gy = v * 4.0;
      const auto ix = std::min<std::size_t>(3, static_cast<std::size_t>(gx));
      const auto iy = std::min<std::size_t>(3, static_cast<std::size_t>(gy));
      const double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
      auto n = [&](std::size_t x, std::size_t y) { return t.noise[y * 5 + x]; };
      const double top = n(ix, iy) * (1 - fx) + n(ix + 1, iy) * fx;
      const double bot = n(ix, iy + 1) * (1 - fx) + n(ix + 1, iy + 1) * fx;
      return top * (1 - fy) + bot * fy;
    }
    case 8: {
      const double fu = u * t.freq - std::floor(u * t.freq) - 0.5;
      const double fv = v * t.freq - std::floor(v * t.freq) - 0.5;
      return fu * fu + fv * fv < 0.09 ? 1.0 : 0.0;
    }
    default:
      return 0.25 * (2.0 + std::sin(kTau * t.freq * u + t.phase) + std::sin(kTau * t.freq * v + t.angle));
  }
}

}  // namespace

Image render_corpus_image(const CorpusSpec& spec, std::size_t index, std::size_t* label) {
  require(spec.classes >= 1 && spec.classes <= kMaxClasses, ErrorKind::Config,
          "class count must be in [1, " + std::to_string(kMaxClasses) + "]");
  require(spec.channels == 1 || spec.channels == 3, ErrorKind::Config, "channels must be 1 or 3");
  require(spec.height > 0 && spec.width > 0, ErrorKind::Config, "image size must be positive");
  Rng rng(Rng::derive(spec.seed, index));
  const std::size_t cls = index % spec.classes;
  if (label) *label = cls;

  Texture background;
  if (spec.kind == CorpusKind::Textures) {
    background = random_texture(rng, cls);
  } else if (spec.kind == CorpusKind::Shapes) {
    background = random_texture(rng, 0);
  } else {
    background = random_texture(rng, static_cast<std::size_t>(rng.uniform_int(0, 9)));
  }
  const bool draw_shape = spec.kind != CorpusKind::Textures;
  const Color shape_color = random_color(rng);
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  const double side = std::min(H, W);
  const double cx = W * 0.5 + rng.uniform(-0.15, 0.15) * W;
  const double cy = H * 0.5 + rng.uniform(-0.15, 0.15) * H;
  const double scale = side * rng.uniform(0.22, 0.38);

  Image img{spec.height, spec.width, 3, std::vector<double>(spec.height * spec.width * 3)};
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      Color c;
      if (draw_shape && inside_shape(cls, (px - cx) / scale, (py - cy) / scale)) {
        c = shape_color;
      } else {
        const double m = texture_mix(background, px / W, py / H);
        for (std::size_t k = 0; k < 3; ++k) c[k] = background.a[k] * (1.0 - m) + background.b[k] * m;
      }
      for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
    }
  }
  return to_channels(img, spec.channels);
}

void split_ids(std::size_t count, std::uint64_t seed, std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  std::vector<std::size_t> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = i;
  Rng rng(Rng::derive(seed, 0x5B117));
  for (std::size_t i = count; i > 1; --i) {
    std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  }
  const std::size_t n_train = (count * 9) / 10;
  train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
}

namespace {

json write_shards(const std::filesystem::path& out_dir, const std::vector<Image>& images,
                  const std::vector<std::size_t>& labels, std::size_t first, std::size_t shard_index) {
  const Image& ref = images.front();
  std::vector<double> pixels;
  pixels.reserve(images.size() * ref.pixels.size());
  for (const auto& im : images) pixels.insert(pixels.end(), im.pixels.begin(), im.pixels.end());
  char name[32];
  std::snprintf(name, sizeof(name), "%03zu", shard_index);
  const std::string img_name = std::string("images_") + name + ".ntb";
  const std::string lbl_name = std::string("labels_") + name + ".ntb";
  ntb::write(out_dir / img_name, Tensor({images.size(), ref.height, ref.width, ref.channels}, std::move(pixels)));
  ntb::write_indices(out_dir / lbl_name, {labels.size()}, labels);
  return json{{"first", first},
              {"count", images.size()},
              {"images", img_name},
              {"labels", lbl_name},
              {"images_sha256", sha256_file(out_dir / img_name)},
              {"labels_sha256", sha256_file(out_dir / lbl_name)}};
}

}  // namespace

CorpusSummary generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  CorpusSummary summary;
  summary.count = spec.count;
  json shards = json::array();
  for (std::size_t first = 0, k = 0; first < spec.count; first += kShardSize, ++k) {
    const std::size_t n = std::min(kShardSize, spec.count - first);
    std::vector<Image> images;
    std::vector<std::size_t> labels(n);
    images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) images.push_back(render_corpus_image(spec, first + i, &labels[i]));
    json entry = write_shards(out_dir, images, labels, first, k);
    summary.files.push_back(entry["images"]);
    summary.files.push_back(entry["labels"]);
    shards.push_back(std::move(entry));
  }
  std::vector<std::size_t> train, val;
  split_ids(spec.count, spec.seed, train, val);
  json manifest{{"corpus",
                 {{"kind", corpus_kind_name(spec.kind)},
                  {"count", spec.count},
                  {"height", spec.height},
                  {"width", spec.width},
                  {"channels", spec.channels},
                  {"classes", spec.classes},
                  {"seed", spec.seed}}},
                {"count", spec.count},
                {"height", spec.height},
                {"width", spec.width},
                {"channels", spec.channels},
                {"train_ids", train},
                {"val_ids", val},
                {"shards", shards}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

IngestSummary ingest_directory(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir,
                               std::size_t height, std::size_t width, std::size_t channels, std::uint64_t seed) {
  require(std::filesystem::is_directory(in_dir), ErrorKind::Io, in_dir.string() + " is not a directory");
  require(height > 0 && width > 0, ErrorKind::Config, "target size must be positive");
  require(channels == 1 || channels == 3, ErrorKind::Config, "channels must be 1 or 3");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(in_dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  IngestSummary summary;
  std::vector<Image> images;
  for (const auto& f : files) {
    try {
      Image img = read_pnm(f);
      img = box_resize(center_crop(img, height, width), height, width);
      images.push_back(to_channels(img, channels));
    } catch (const Error& e) {
      summary.failed.push_back(f.filename().string() + ": " + e.detail());
    }
  }
  summary.ingested = images.size();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  json shards = json::array();
  for (std::size_t first = 0, k = 0; first < images.size(); first += kShardSize, ++k) {
    const std::size_t n = std::min(kShardSize, images.size() - first);
    std::vector<Image> part(images.begin() + static_cast<std::ptrdiff_t>(first),
                            images.begin() + static_cast<std::ptrdiff_t>(first + n));
    shards.push_back(write_shards(out_dir, part, std::vector<std::size_t>(n, 0), first, k));
  }
  std::vector<std::size_t> train, val;
  split_ids(images.size(), seed, train, val);
  json manifest{{"corpus", {{"kind", "ingested"}, {"source", in_dir.string()}, {"seed", seed}}},
                {"count", images.size()},
                {"height", height},
                {"width", width},
                {"channels", channels},
                {"train_ids", train},
                {"val_ids", val},
                {"failed", summary.failed},
                {"shards", shards}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, "invalid dataset manifest in " + dir.string() + ": " + e.what());
  }
  Dataset ds;
  ds.height_ = manifest.at("height").get<std::size_t>();
  ds.width_ = manifest.at("width").get<std::size_t>();
  ds.channels_ = manifest.at("channels").get<std::size_t>();
  for (const auto& shard : manifest.at("shards")) {
    for (const char* key : {"images", "labels"}) {
      const std::string file = shard.at(key).get<std::string>();
      require(sha256_file(dir / file) == shard.at(std::string(key) + "_sha256").get<std::string>(), ErrorKind::Io,
              "checksum mismatch for " + (dir / file).string());
    }
    const Tensor imgs = ntb::read(dir / shard.at("images").get<std::string>());
    const auto lbls = ntb::read_indices(dir / shard.at("labels").get<std::string>());
    require(imgs.rank() == 4 && imgs.dim(1) == ds.height_ && imgs.dim(2) == ds.width_ &&
                imgs.dim(3) == ds.channels_ && imgs.dim(0) == lbls.size(),
            ErrorKind::Io, "shard geometry does not match manifest in " + dir.string());
    ds.pixels_.insert(ds.pixels_.end(), imgs.data().begin(), imgs.data().end());
    ds.labels_.insert(ds.labels_.end(), lbls.begin(), lbls.end());
  }
  ds.train_ = manifest.at("train_ids").get<std::vector<std::size_t>>();
  ds.val_ = manifest.at("val_ids").get<std::vector<std::size_t>>();
  require(ds.labels_.size() == manifest.at("count").get<std::size_t>(), ErrorKind::Io,
          "dataset count mismatch in " + dir.string());
  return ds;
}

Dataset Dataset::from_images(const std::vector<Image>& images, std::vector<std::size_t> labels, std::uint64_t seed) {
  require(!images.empty() && images.size() == labels.size(), ErrorKind::Value, "from_images needs labelled images");
  Dataset ds;
  ds.height_ = images[0].height;
  ds.width_ = images[0].width;
  ds.channels_ = images[0].channels;
  for (const auto& im : images) {
    require(im.height == ds.height_ && im.width == ds.width_ && im.channels == ds.channels_, ErrorKind::Shape,
            "images differ in geometry");
    ds.pixels_.insert(ds.pixels_.end(), im.pixels.begin(), im.pixels.end());
  }
  ds.labels_ = std::move(labels);
  split_ids(images.size(), seed, ds.train_, ds.val_);
  return ds;
}

Image Dataset::image(std::size_t i) const {
  require(i < size(), ErrorKind::Value, "image index out of range");
  const auto px = pixels(i);
  return Image{height_, width_, channels_, std::vector<double>(px.begin(), px.end())};
}

std::vector<double> Dataset::gather(std::span<const std::size_t> ids) const {
  std::vector<double> out;
  out.reserve(ids.size() * image_numel());
  for (std::size_t id : ids) {
    require(id < size(), ErrorKind::Value, "image index out of range");
    const auto px = pixels(id);
    out.insert(out.end(), px.begin(), px.end());
  }
  return out;
}

}  // namespace cvq
