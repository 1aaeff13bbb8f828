// Command-line front end: generate, train, ablate, analyze.

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>

#include "dsts/error.hpp"
#include "dsts/experiment.hpp"

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out, data, checkpoint, grid, seeds;
  bool no_dsts = false, no_sts = false, no_gates = false, no_synapse = false, no_udl = false;
};

dsts::ExperimentConfig resolve(const Flags& f) {
  dsts::ExperimentConfig c;
  if (!f.config.empty()) c.apply(dsts::KeyValues::read_file(f.config));
  dsts::KeyValues overrides;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw dsts::ConfigError("--set expects key=value, got '" + s + "'");
    overrides.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) overrides.set("seed", std::to_string(*f.seed));
  if (!f.out.empty()) overrides.set("out", f.out);
  if (!f.data.empty()) overrides.set("data", f.data);
  if (!f.checkpoint.empty()) overrides.set("checkpoint", f.checkpoint);
  if (!f.grid.empty()) overrides.set("grid", f.grid);
  if (!f.seeds.empty()) overrides.set("seeds", f.seeds);
  if (f.no_dsts) overrides.set("dsts", "false");
  if (f.no_sts) overrides.set("sts", "false");
  if (f.no_gates) overrides.set("gates", "false");
  if (f.no_synapse) overrides.set("synapse", "false");
  if (f.no_udl) overrides.set("udl", "false");
  c.apply(overrides);
  return c;
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DSTS: dynamic spatio-temporal specialization on synthetic fine-grained video"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", f.sets, "extra key=value override, repeatable");
  app.add_option("--seed", f.seed, "seed for all randomness of the command");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--data", f.data, "dataset directory (train, ablate, analyze)");
  app.add_option("--checkpoint", f.checkpoint, "checkpoint to analyze (default <out>/checkpoint.bin)");
  app.add_option("--grid", f.grid, "comma-separated ablation switches: dsts,sts,gates,synapse,udl");
  app.add_option("--seeds", f.seeds, "comma-separated seeds for ablate");
  app.add_flag("--no-dsts", f.no_dsts, "drop the DSTS module (backbone + head only)");
  app.add_flag("--no-sts", f.no_sts, "3x3x3 convolution neurons instead of spatial/temporal pairs");
  app.add_flag("--no-gates", f.no_gates, "fixed half spatial, half temporal channel split");
  app.add_flag("--no-synapse", f.no_synapse, "run every neuron and average");
  app.add_flag("--no-udl", f.no_udl, "plain joint gradient steps instead of UDL");

  auto* generate = app.add_subcommand("generate", "write a synthetic dataset to --out");
  auto* train = app.add_subcommand("train", "train on --data, write checkpoint and metrics to --out");
  auto* ablate = app.add_subcommand("ablate", "train every grid combination for every seed");
  auto* analyze = app.add_subcommand("analyze", "routing report of a checkpoint on the test split");
  for (auto* sub : {generate, train, ablate, analyze}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help prints and succeeds
  }

  try {
    dsts::ExperimentConfig config = resolve(f);
    if (generate->parsed()) {
      const auto r = dsts::cmd_generate(config, log_line);
      std::cout << "records=" << r.records << "\nhash=" << r.hash << "\n";
    } else if (train->parsed()) {
      const auto r = dsts::cmd_train(config, log_line);
      std::cout << "final_accuracy=" << dsts::format_double(r.final_accuracy) << "\n";
    } else if (ablate->parsed()) {
      const auto rows = dsts::cmd_ablate(config, log_line);
      std::cout << std::left << std::setw(28) << "combination" << "  mean     std\n";
      for (const auto& row : rows) {
        std::cout << std::setw(28) << row.name << "  " << std::fixed << std::setprecision(4) << row.mean() << "  "
                  << row.stddev() << "\n";
      }
    } else if (analyze->parsed()) {
      const auto r = dsts::cmd_analyze(config, log_line);
      std::cout << "accuracy=" << dsts::format_double(r.accuracy) << "\n";
      for (std::size_t l = 0; l < r.layers.size(); ++l) {
        std::cout << "routing_entropy_l" << l << "=" << dsts::format_double(r.layers[l].routing_entropy) << "\n";
      }
    }
  } catch (const dsts::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
