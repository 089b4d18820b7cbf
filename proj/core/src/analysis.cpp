#include "cvq/analysis.hpp"

#include <fstream>

#include <json.hpp>

#include "cvq/car.hpp"
#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/training.hpp"

namespace cvq {

namespace fs = std::filesystem;
using json = nlohmann::json;

SweepReport progressive_sweep(const Autoencoder& model, const Codebook& codebook, const Dataset& data,
                              std::span<const std::size_t> ids, std::span<const std::size_t> n_list,
                              std::size_t chunk) {
  const std::size_t c = model.config().latent_channels;
  require(codebook.axis() == Axis::Channel, ErrorKind::Value, "the progressive sweep needs a channel-axis model");
  require(!n_list.empty(), ErrorKind::Value, "empty channel list");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    require(n_list[i] >= 1 && n_list[i] <= c, ErrorKind::Value,
            "channel count " + std::to_string(n_list[i]) + " outside [1, " + std::to_string(c) + "]");
    require(i == 0 || n_list[i] > n_list[i - 1], ErrorKind::Value, "channel counts must be strictly increasing");
  }
  require(!ids.empty(), ErrorKind::Value, "no images to evaluate");
  SweepReport report;
  report.rows.resize(n_list.size());
  for (std::size_t i = 0; i < n_list.size(); ++i) report.rows[i].n_channels = n_list[i];
  double total = 0.0;
  for (std::size_t s = 0; s < ids.size(); s += chunk) {
    const auto part = ids.subspan(s, std::min(chunk, ids.size() - s));
    const ImageBatch x = make_batch(data, part);
    const auto seqs = extract_tokens(model, codebook, data, part, chunk);
    std::vector<std::size_t> flat;
    for (const auto& q : seqs) flat.insert(flat.end(), q.indices.begin(), q.indices.end());
    const double w = static_cast<double>(part.size());
    for (auto& row : report.rows) {
      const ImageMetrics m = batch_metrics(x, clamp01(progressive_decode(flat, row.n_channels, codebook, model)));
      row.mse += m.mse * w;
      row.psnr += m.psnr * w;
      row.ssim += m.ssim * w;
    }
    total += w;
  }
  for (auto& row : report.rows) {
    row.mse /= total;
    row.psnr /= total;
    row.ssim /= total;
  }
  return report;
}

AblationResult ablate_latent(const Autoencoder& model, const LatentGrid& quantized, std::size_t k) {
  const std::size_t c = quantized.channels();
  require(k >= 1 && k <= c, ErrorKind::Value,
          "channel " + std::to_string(k) + " outside [1, " + std::to_string(c) + "]");
  const Tensor base_values = stop_gradient(quantized.values());
  std::vector<double> zeroed = base_values.to_vector();
  for (std::size_t i = k - 1; i < zeroed.size(); i += c) zeroed[i] = 0.0;
  AblationResult r;
  r.channel = k;
  r.baseline = model.decode(LatentGrid(base_values));
  r.ablated = model.decode(LatentGrid(Tensor(base_values.shape(), std::move(zeroed))));
  std::vector<double> diff(r.baseline.pixels.numel());
  const auto b = r.baseline.pixels.data(), a = r.ablated.pixels.data();
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = b[i] - a[i];
    r.diff_energy += diff[i] * diff[i];
  }
  r.diff = Tensor(r.baseline.pixels.shape(), std::move(diff));
  return r;
}

AblationResult channel_ablation(const Autoencoder& model, const Codebook& codebook, const ImageBatch& image,
                                std::size_t k) {
  require(image.pixels.rank() == 4 && image.batch() == 1, ErrorKind::Shape, "ablation expects a single image");
  const LatentGrid z = model.encode(image);
  const LookupResult lk = lookup(codebook.axis() == Axis::Patch ? z.patch_view() : z.channel_view(), codebook);
  return ablate_latent(model, dequantize(lk.indices, codebook, 1, z.height(), z.width(), z.channels()), k);
}

SeparabilityStats token_separability(const Autoencoder& model, const Dataset& data, std::span<const std::size_t> ids,
                                     Axis axis) {
  return separability_stats(tokens_by_image(model.encode(make_batch(data, ids)), axis));
}

namespace {

void append(std::ofstream& out, const std::string& s) {
  out << s;
  out.flush();
}

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

ComparisonReport run_comparison(const Dataset& data, const RunConfig& base, std::span<const std::string> axes,
                                std::span<const std::size_t> sizes, const fs::path& out_dir) {
  require(!axes.empty() && !sizes.empty(), ErrorKind::Config, "empty comparison grid");
  ComparisonReport report;
  report.seed = base.seed;
  report.steps = base.steps;
  const std::size_t sep_images = std::min<std::size_t>(16, data.val_ids().size());
  const std::span<const std::size_t> sep_ids(data.val_ids().data(), sep_images);
  for (const auto& axis : axes) {
    for (std::size_t n : sizes) {
      RunConfig cfg = base;
      cfg.axis = axis;
      cfg.codebook_size = n;
      cfg.nested_dropout = false;
      TokenizerTrainer trainer(cfg, data);
      std::ofstream log;
      if (!out_dir.empty()) {
        const fs::path cell_dir = out_dir / ("cell_" + axis + "_" + std::to_string(n));
        fs::create_directories(cell_dir);
        write_file(cell_dir / "config.json", cfg.to_json());
        log = open_csv(cell_dir / "train_log.csv");
        append(log, tokenizer_log_header());
      }
      ComparisonCell cell;
      cell.axis = axis;
      cell.codebook_size = n;
      cell.config_hash = cfg.hash();
      const std::size_t every = std::max<std::size_t>(1, cfg.compare_eval_every);
      for (std::size_t s = 0; s < cfg.steps; ++s) {
        const TokenizerStepLog l = trainer.step();
        if (log.is_open()) append(log, tokenizer_log_row(l));
        if (l.step % every == 0 || l.step == cfg.steps) {
          cell.series.push_back({l.step, l.lifetime_utilization, l.window_utilization});
        }
      }
      if (trainer.steps_done() > 0) {
        const UsageStats life = usage_stats(trainer.codebook().usage(), 0);
        cell.lifetime_utilization = life.utilization;
        cell.dead_codes = life.dead_code_count;
        cell.window_utilization = usage_stats(trainer.codebook().usage(), trainer.usage_window()).utilization;
      }
      const TokenizerEval ev = evaluate_tokenizer(trainer.model(), trainer.codebook(), data, data.val_ids());
      cell.validation = ev.metrics;
      cell.validation_utilization = ev.utilization;
      if (sep_images >= 2) cell.separability = token_separability(trainer.model(), data, sep_ids, parse_axis(axis));
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

void write_sweep_csv(const fs::path& path, const SweepReport& report) {
  std::ofstream out = open_csv(path);
  out << "n_channels,psnr,ssim,mse\n";
  for (const auto& r : report.rows) {
    out << r.n_channels << "," << csv_number(r.psnr) << "," << csv_number(r.ssim) << "," << csv_number(r.mse)
        << "\n";
  }
  require(out.good(), ErrorKind::Io, "failed writing '" + path.string() + "'");
}

void write_comparison_csv(const fs::path& path, const ComparisonReport& report) {
  std::ofstream out = open_csv(path);
  out << "axis,codebook_size,steps,lifetime_utilization,window_utilization,validation_utilization,dead_codes,"
         "val_mse,val_psnr,val_ssim,intra_mean,inter_mean,overlap_ratio,config_hash\n";
  for (const auto& c : report.cells) {
    out << c.axis << "," << c.codebook_size << "," << report.steps << "," << csv_number(c.lifetime_utilization)
        << "," << csv_number(c.window_utilization) << "," << csv_number(c.validation_utilization) << ","
        << c.dead_codes << "," << csv_number(c.validation.mse) << "," << csv_number(c.validation.psnr) << ","
        << csv_number(c.validation.ssim) << "," << csv_number(c.separability.intra_mean) << ","
        << csv_number(c.separability.inter_mean) << "," << csv_number(c.separability.overlap_ratio) << ","
        << c.config_hash << "\n";
  }
  require(out.good(), ErrorKind::Io, "failed writing '" + path.string() + "'");
}

void write_plot_data(const fs::path& path, std::span<const PlotPoint> points) {
  std::ofstream out = open_csv(path);
  out << "x,y,series\n";
  for (const auto& p : points) out << csv_number(p.x) << "," << csv_number(p.y) << "," << p.series << "\n";
  require(out.good(), ErrorKind::Io, "failed writing '" + path.string() + "'");
}

void write_sidecar(const fs::path& path, const RunConfig& config,
                   const std::vector<std::pair<std::string, std::string>>& content_ids) {
  json j;
  j["config_hash"] = config.hash();
  j["seed"] = config.seed;
  j["content_ids"] = json::object();
  for (const auto& [k, v] : content_ids) j["content_ids"][k] = v;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, j.dump(2) + "\n");
}

}  // namespace cvq
