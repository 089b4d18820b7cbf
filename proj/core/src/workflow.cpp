#include "cvq/workflow.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cvq/analysis.hpp"
#include "cvq/checkpoint.hpp"
#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/image_io.hpp"
#include "cvq/ntb.hpp"
#include "cvq/training.hpp"

namespace cvq {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path start_run(const RunConfig& config) {
  config.validate();
  const fs::path dir = config.run_dir;
  fs::create_directories(dir);
  write_file(dir / "config.json", config.to_json());
  return dir;
}

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& header) : out_(path, std::ios::binary | std::ios::trunc) {
    require(out_.good(), ErrorKind::Io, "cannot write '" + path.string() + "'");
    write(header);
  }
  void write(const std::string& line) {
    out_ << line;
    out_.flush();
    require(out_.good(), ErrorKind::Io, "csv write failed");
  }

 private:
  std::ofstream out_;
};

std::vector<std::size_t> limit(const std::vector<std::size_t>& ids, std::size_t n) {
  if (n == 0 || n >= ids.size()) return ids;
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)};
}

const std::string& need(const std::string& path, const char* key) {
  require(!path.empty(), ErrorKind::Config, std::string("this command needs '") + key + "'");
  return path;
}

Dataset load_data(const RunConfig& config) {
  require(fs::is_directory(config.data_dir), ErrorKind::Io, "data directory '" + config.data_dir + "' not found");
  return Dataset::load(config.data_dir);
}

Image to_image(const ImageBatch& batch, std::size_t b) {
  Image img;
  img.height = batch.height();
  img.width = batch.width();
  img.channels = batch.channels();
  const std::size_t n = img.height * img.width * img.channels;
  const auto d = batch.pixels.data().subspan(b * n, n);
  img.pixels.assign(d.begin(), d.end());
  return img;
}

std::string kv(const std::string& k, const std::string& v) { return k + "=" + v + "\n"; }

}  // namespace

std::string run_gen_data(const RunConfig& config) {
  start_run(config);
  const CorpusSummary s = generate_corpus(config.corpus(), config.data_dir);
  return kv("images", std::to_string(s.count)) + kv("data_dir", config.data_dir);
}

std::string run_ingest(const RunConfig& config, const std::string& input_dir) {
  start_run(config);
  const IngestSummary s = ingest_directory(input_dir, config.data_dir, config.image_height, config.image_width,
                                           config.image_channels, config.seed);
  std::string out = kv("ingested", std::to_string(s.ingested)) + kv("failed", std::to_string(s.failed.size()));
  for (const auto& f : s.failed) out += kv("failure", f);
  return out;
}

std::string run_train_tokenizer(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const Dataset data = load_data(config);
  TokenizerTrainer trainer(config, data);
  CsvFile log(dir / "train_log.csv", tokenizer_log_header());
  CsvFile usage(dir / "usage.csv", "step,utilization,distinct,dead,window_utilization\n");
  for (std::size_t s = 0; s < config.steps; ++s) {
    const TokenizerStepLog l = trainer.step();
    log.write(tokenizer_log_row(l));
    const UsageStats u = usage_stats(trainer.codebook().usage(), 0);
    usage.write(std::to_string(l.step) + "," + csv_number(u.utilization) + "," + std::to_string(u.distinct) + "," +
                std::to_string(u.dead_code_count) + "," + csv_number(l.window_utilization) + "\n");
  }
  save_tokenizer_checkpoint(dir / "checkpoint", trainer.model(), trainer.codebook(), config, trainer.steps_done());
  const auto val = limit(data.val_ids(), config.eval_images);
  const TokenizerEval ev = evaluate_tokenizer(trainer.model(), trainer.codebook(), data, val);
  CsvFile eval(dir / "eval.csv", "split,images,mse,psnr,ssim,distinct,utilization\n");
  eval.write("val," + std::to_string(val.size()) + "," + csv_number(ev.metrics.mse) + "," +
             csv_number(ev.metrics.psnr) + "," + csv_number(ev.metrics.ssim) + "," + std::to_string(ev.distinct) +
             "," + csv_number(ev.utilization) + "\n");
  return kv("steps", std::to_string(trainer.steps_done())) + kv("val_psnr", csv_number(ev.metrics.psnr)) +
         kv("checkpoint", (dir / "checkpoint").string());
}

std::string run_extract_tokens(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const TokenizerCheckpoint ck = load_tokenizer_checkpoint(need(config.tokenizer_checkpoint, "tokenizer_checkpoint"));
  const Dataset data = load_data(config);
  const CarConfig car = ck.config.car();
  const auto train = extract_tokens(ck.model, ck.codebook, data, data.train_ids());
  write_token_set(dir / "tokens", train, ck.codebook, car.geometry);
  const auto val = extract_tokens(ck.model, ck.codebook, data, data.val_ids());
  write_token_set(dir / "tokens_val", val, ck.codebook, car.geometry);
  return kv("train_sequences", std::to_string(train.size())) + kv("val_sequences", std::to_string(val.size())) +
         kv("tokens_dir", (dir / "tokens").string());
}

std::string run_train_car(const RunConfig& config) {
  const fs::path dir = start_run(config);
  TokenSet set = read_token_set(need(config.tokens_dir, "tokens_dir"));
  RunConfig cfg = config;
  cfg.latent_channels = set.geometry.channels;
  cfg.codebook_size = set.geometry.codebook_size;
  require(cfg.image_height / cfg.patch == set.geometry.height && cfg.image_width / cfg.patch == set.geometry.width,
          ErrorKind::Config, "token grid does not match image_height/patch and image_width/patch");
  CarTrainer trainer(cfg, std::move(set.sequences), set.codebook);
  CsvFile log(dir / "car_log.csv", "step,loss,accuracy\n");
  CarStepResult last;
  for (std::size_t s = 0; s < cfg.car_steps; ++s) {
    last = trainer.step();
    log.write(std::to_string(trainer.steps_done()) + "," + csv_number(last.loss) + "," + csv_number(last.accuracy) +
              "\n");
    if (last.accuracy >= cfg.car_target_accuracy) break;
  }
  save_car_checkpoint(dir / "car_checkpoint", trainer.model(), cfg, trainer.steps_done());
  return kv("steps", std::to_string(trainer.steps_done())) + kv("loss", csv_number(last.loss)) +
         kv("accuracy", csv_number(last.accuracy)) + kv("checkpoint", (dir / "car_checkpoint").string());
}

std::string run_generate(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const CarCheckpoint car = load_car_checkpoint(need(config.car_checkpoint, "car_checkpoint"));
  const TokenizerCheckpoint tok = load_tokenizer_checkpoint(need(config.tokenizer_checkpoint, "tokenizer_checkpoint"));
  const auto& g = car.model.config().geometry;
  require(tok.codebook.axis() == Axis::Channel && tok.codebook.size() == g.codebook_size &&
              tok.codebook.dim() == g.height * g.width && tok.model.config().latent_channels == g.channels,
          ErrorKind::Shape, "tokenizer and transformer checkpoints disagree on the token geometry");
  fs::create_directories(dir / "samples");
  CsvFile csv(dir / "samples.csv", "sample,label,seed,tokens\n");
  for (std::size_t i = 0; i < config.num_samples; ++i) {
    SamplingConfig sc = config.sampling();
    sc.seed = Rng::derive(config.seed, 100 + i);
    const TokenSequence seq = generate(car.model, tok.codebook.entries(), config.label, sc);
    const ImageBatch img = clamp01(progressive_decode(seq.indices, g.channels, tok.codebook, tok.model));
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu.ppm", i);
    write_pnm(dir / "samples" / name, to_image(img, 0));
    std::string toks;
    for (std::size_t k = 0; k < seq.indices.size(); ++k) toks += (k ? " " : "") + std::to_string(seq.indices[k]);
    csv.write(std::to_string(i) + "," + std::to_string(seq.label) + "," + std::to_string(sc.seed) + "," + toks +
              "\n");
  }
  return kv("samples", std::to_string(config.num_samples)) + kv("dir", (dir / "samples").string());
}

std::string run_sweep(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const std::string ck_dir = need(config.tokenizer_checkpoint, "tokenizer_checkpoint");
  const TokenizerCheckpoint ck = load_tokenizer_checkpoint(ck_dir);
  const Dataset data = load_data(config);
  std::vector<std::size_t> n_list = config.sweep_channels;
  if (n_list.empty()) {
    n_list.resize(ck.model.config().latent_channels);
    std::iota(n_list.begin(), n_list.end(), 1);
  }
  const auto val = limit(data.val_ids(), config.eval_images);
  SweepReport report = progressive_sweep(ck.model, ck.codebook, data, val, n_list);
  report.model_id = checkpoint_content_id(ck_dir);
  report.config_hash = config.hash();
  write_sweep_csv(dir / "sweep.csv", report);
  write_sidecar(dir / "sweep.json", config, {{"tokenizer_checkpoint", report.model_id}});
  std::vector<PlotPoint> pts;
  for (const auto& r : report.rows) {
    pts.push_back({static_cast<double>(r.n_channels), r.psnr, "psnr"});
    pts.push_back({static_cast<double>(r.n_channels), r.ssim, "ssim"});
  }
  write_plot_data(dir / "sweep_plot.csv", pts);
  return kv("rows", std::to_string(report.rows.size())) + kv("psnr_full", csv_number(report.rows.back().psnr));
}

std::string run_compare(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const Dataset data = load_data(config);
  const ComparisonReport report = run_comparison(data, config, config.compare_axes, config.compare_sizes, dir);
  write_comparison_csv(dir / "comparison.csv", report);
  write_sidecar(dir / "comparison.json", config, {});
  std::vector<PlotPoint> pts;
  for (const auto& c : report.cells) {
    for (const auto& p : c.series) {
      pts.push_back({static_cast<double>(p.step), p.lifetime,
                     c.axis + "_" + std::to_string(c.codebook_size) + "_lifetime"});
      pts.push_back({static_cast<double>(p.step), p.window,
                     c.axis + "_" + std::to_string(c.codebook_size) + "_window"});
    }
  }
  write_plot_data(dir / "comparison_plot.csv", pts);
  std::string out;
  for (const auto& c : report.cells) {
    out += kv(c.axis + "_" + std::to_string(c.codebook_size) + "_lifetime_utilization",
              csv_number(c.lifetime_utilization));
  }
  return out;
}

std::string run_ablate_channel(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const TokenizerCheckpoint ck = load_tokenizer_checkpoint(need(config.tokenizer_checkpoint, "tokenizer_checkpoint"));
  const Dataset data = load_data(config);
  require(config.ablate_image < data.val_ids().size(), ErrorKind::Value, "ablate_image outside the validation split");
  const std::size_t id = data.val_ids()[config.ablate_image];
  const ImageBatch image = make_batch(data, std::span<const std::size_t>(&id, 1));
  const std::size_t c = ck.model.config().latent_channels;
  require(config.ablate_channel >= 1 && config.ablate_channel <= c, ErrorKind::Value, "ablate_channel outside [1, c]");
  CsvFile csv(dir / "ablation.csv", "channel,diff_energy\n");
  for (std::size_t k = 1; k <= c; ++k) {
    const AblationResult r = channel_ablation(ck.model, ck.codebook, image, k);
    csv.write(std::to_string(k) + "," + csv_number(r.diff_energy) + "\n");
    if (k == config.ablate_channel) {
      fs::create_directories(dir / "ablation");
      write_pnm(dir / "ablation" / "baseline.ppm", to_image(clamp01(r.baseline), 0));
      write_pnm(dir / "ablation" / "ablated.ppm", to_image(clamp01(r.ablated), 0));
      ntb::write(dir / "ablation" / "diff.ntb", r.diff);
      auto v = r.diff.to_vector();
      for (double& p : v) p = std::clamp(0.5 + 0.5 * p, 0.0, 1.0);
      write_pnm(dir / "ablation" / "diff.ppm", to_image(ImageBatch{Tensor(r.diff.shape(), std::move(v))}, 0));
    }
  }
  return kv("channels", std::to_string(c)) + kv("dir", (dir / "ablation").string());
}

std::string run_eval(const RunConfig& config) {
  const fs::path dir = start_run(config);
  const TokenizerCheckpoint ck = load_tokenizer_checkpoint(need(config.tokenizer_checkpoint, "tokenizer_checkpoint"));
  const Dataset data = load_data(config);
  const auto val = limit(data.val_ids(), config.eval_images);
  const TokenizerEval ev = evaluate_tokenizer(ck.model, ck.codebook, data, val);
  CsvFile eval(dir / "eval.csv", "split,images,mse,psnr,ssim,distinct,utilization\n");
  eval.write("val," + std::to_string(val.size()) + "," + csv_number(ev.metrics.mse) + "," +
             csv_number(ev.metrics.psnr) + "," + csv_number(ev.metrics.ssim) + "," + std::to_string(ev.distinct) +
             "," + csv_number(ev.utilization) + "\n");
  if (ck.codebook.axis() == Axis::Channel) {
    CsvFile trunc(dir / "truncation.csv", "c_keep,mse\n");
    const std::size_t c = ck.model.config().latent_channels;
    for (std::size_t k = 1; k <= c; k *= 2) {
      trunc.write(std::to_string(k) + "," + csv_number(truncated_mse(ck.model, ck.codebook, data, val, k)) + "\n");
    }
  }
  return kv("val_mse", csv_number(ev.metrics.mse)) + kv("val_psnr", csv_number(ev.metrics.psnr)) +
         kv("val_ssim", csv_number(ev.metrics.ssim));
}

}  // namespace cvq
