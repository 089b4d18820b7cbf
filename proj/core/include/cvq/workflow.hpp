#pragma once

// One function per CLI subcommand. Each writes its outputs under
// config.run_dir, starting with a config.json echo, and returns a short
// key=value summary.
//
// Run directory layout:
//   config.json                  echoed configuration
//   train_log.csv, usage.csv     tokenizer training (per step)
//   eval.csv, truncation.csv     tokenizer evaluation
//   checkpoint/                  tokenizer checkpoint
//   tokens/, tokens_val/         extracted channel token sequences
//   car_log.csv, car_checkpoint/ next-channel model training
//   samples/, samples.csv        generated images and their tokens
//   sweep.csv, sweep.json, sweep_plot.csv
//   comparison.csv, comparison.json, comparison_plot.csv, cell_<axis>_<N>/
//   ablation.csv, ablation/      per-channel diff energies and images

#include <string>

#include "cvq/config.hpp"

namespace cvq {

std::string run_gen_data(const RunConfig& config);
std::string run_ingest(const RunConfig& config, const std::string& input_dir);
std::string run_train_tokenizer(const RunConfig& config);
std::string run_extract_tokens(const RunConfig& config);
std::string run_train_car(const RunConfig& config);
std::string run_generate(const RunConfig& config);
std::string run_sweep(const RunConfig& config);
std::string run_compare(const RunConfig& config);
std::string run_ablate_channel(const RunConfig& config);
std::string run_eval(const RunConfig& config);

}  // namespace cvq
