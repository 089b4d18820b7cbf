// cvq: command line front end for the tokenizer / next-channel workflow.
//
// Every subcommand accepts --config FILE (flat JSON) and one flag per config
// key (underscores become dashes); flags override the file. Failures print a
// single line "error=<Class> detail=\"...\"" to stderr and exit with 2.

#include <algorithm>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "cvq/config.hpp"
#include "cvq/error.hpp"
#include "cvq/hashing.hpp"
#include "cvq/workflow.hpp"

namespace {

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

std::string one_line(std::string s) {
  std::string out;
  for (char ch : s) {
    if (ch == '\n' || ch == '\r') {
      out += ' ';
    } else if (ch == '"' || ch == '\\') {
      out += '\\';
      out += ch;
    } else {
      out += ch;
    }
  }
  return out;
}

int report(std::string_view kind, const std::string& detail) {
  std::cerr << "error=" << kind << " detail=\"" << one_line(detail) << "\"\n";
  return 2;
}

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;  // key -> flag text
  std::function<std::string(const cvq::RunConfig&)> run;
};

// Short spellings used in the documented examples.
const std::map<std::string, std::string> kAliases = {
    {"compare_axes", "--axes"},
    {"compare_sizes", "--codebook-sizes"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-wise vector quantization tokenizer and next-channel generator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const auto fields = cvq::config_fields();
  std::vector<std::unique_ptr<Command>> commands;
  std::string ingest_input;

  auto add = [&](const std::string& name, const std::string& help, auto fn) {
    auto cmd = std::make_unique<Command>();
    cmd->app = app.add_subcommand(name, help);
    cmd->app->add_option("--config", cmd->config_file, "flat JSON config; flags override it")
        ->check(CLI::ExistingFile);
    for (const auto& f : fields) {
      std::string names = flag_name(f.key);
      if (auto a = kAliases.find(f.key); a != kAliases.end()) names += "," + a->second;
      cmd->app->add_option(names, cmd->values[f.key], f.help + " [default: " + f.default_value + "]");
    }
    cmd->run = fn;
    commands.push_back(std::move(cmd));
    return commands.back()->app;
  };

  add("gen-data", "Render the synthetic corpus into data_dir", cvq::run_gen_data);
  auto* ingest = add("ingest", "Convert a directory of PGM/PPM images into a dataset at data_dir",
                     [&](const cvq::RunConfig& c) { return cvq::run_ingest(c, ingest_input); });
  ingest->add_option("--input", ingest_input, "directory of .pgm/.ppm files")->required();
  add("train-tokenizer", "Train a patch or channel tokenizer", cvq::run_train_tokenizer);
  add("extract-tokens", "Write channel token sequences of a trained tokenizer", cvq::run_extract_tokens);
  add("train-car", "Train the next-channel transformer on extracted tokens", cvq::run_train_car);
  add("generate", "Sample token sequences and decode them to images", cvq::run_generate);
  add("sweep", "Reconstruction quality with progressively more channels", cvq::run_sweep);
  add("compare", "Patch vs channel codebook usage over a grid of codebook sizes", cvq::run_compare);
  add("ablate-channel", "Zero single channels before decoding and record the differences",
      cvq::run_ablate_channel);
  add("eval", "Reconstruction metrics and codebook usage on the validation split", cvq::run_eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("ConfigError", e.what());
  }

  try {
    for (const auto& cmd : commands) {
      if (!cmd->app->parsed()) continue;
      cvq::RunConfig config;
      if (!cmd->config_file.empty()) config = cvq::RunConfig::from_json(cvq::read_file(cmd->config_file));
      for (const auto& f : fields) {
        if (cmd->app->count(flag_name(f.key)) > 0) config.set(f.key, cmd->values[f.key]);
      }
      std::cout << cmd->run(config);
      return 0;
    }
  } catch (const cvq::Error& e) {
    return report(std::string(cvq::error_kind_name(e.kind())), e.detail());
  } catch (const std::exception& e) {
    return report("InternalError", e.what());
  }
  return report("ConfigError", "no subcommand given");
}
