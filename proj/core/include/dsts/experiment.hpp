#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dsts/dataset.hpp"
#include "dsts/keyvalue.hpp"
#include "dsts/model.hpp"
#include "dsts/training.hpp"

namespace dsts {

/// Everything a command needs, resolvable from key=value text. Dataset dims
/// override the model's clip shape and class count.
struct ExperimentConfig {
  DatasetSpec data;
  ModelConfig model;
  TrainConfig train;

  std::uint64_t seed = 0;               // model init and training
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};  // ablation sweeps
  std::uint64_t data_seed = 0;          // generation and split, when generating
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  std::filesystem::path checkpoint;     // analyze; empty means <out>/checkpoint.bin
  std::vector<std::string> grid;        // ablation switches: dsts, sts, gates, synapse, udl

  /// Applies recognised keys; unknown keys are a ConfigError.
  void apply(const KeyValues& kv);
  /// Copies dataset dims into the model config and checks everything.
  void resolve();
  KeyValues to_key_values() const;
};

/// Logger for progress lines; a null function discards them.
using Log = std::function<void(const std::string&)>;

struct GenerateOutcome {
  std::size_t records = 0;
  std::uint64_t hash = 0;
};
/// Writes the dataset and a config echo (with the content hash) to
/// config.out_dir. Generation uses config.seed.
GenerateOutcome cmd_generate(const ExperimentConfig& config, const Log& log = {});

struct TrainOutcome {
  std::vector<EpochMetrics> history;
  double final_accuracy = 0.0;
  std::int64_t routing_parameters = 0;
};
/// Trains on the dataset in config.data_dir (split with the dataset's own
/// seed) and writes checkpoint.bin, metrics.csv and config.txt to
/// config.out_dir.
TrainOutcome cmd_train(const ExperimentConfig& config, const Log& log = {});

/// One switch combination of an ablation sweep.
struct AblationRow {
  std::string name;  // e.g. "dsts+sts-gates+synapse+udl"
  std::vector<double> accuracies;  // per seed, in config.seeds order
  std::int64_t routing_parameters = 0;
  double mean() const;
  double stddev() const;
};
/// Runs every combination of the grid switches (others as configured) for
/// every seed, in <out>/<name>/seed<k>, and writes summary.csv.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const Log& log = {});

struct NeuronReport {
  std::int64_t activations = 0;
  std::vector<std::int64_t> class_histogram;
  double purity = 0.0;  // share of routed samples in the modal pair
  int modal_pair = -1;
  PairAxis modal_axis = PairAxis::Spatial;
  double temporal_fraction = 0.0;
};
struct LayerReport {
  double routing_entropy = 0.0;
  std::vector<NeuronReport> neurons;
};
struct RoutingReport {
  std::int64_t samples = 0;
  double accuracy = 0.0;
  std::vector<LayerReport> layers;
};

/// Eval-mode routing statistics of `model` over `samples`.
RoutingReport routing_report(Model& model, std::span<const VideoSample> samples, int classes);
void write_report_text(std::ostream& out, const RoutingReport& report);
void write_report_csv(std::ostream& out, const RoutingReport& report);

/// Loads the checkpoint and the dataset's test split and writes
/// routing_report.txt and routing_report.csv to config.out_dir.
RoutingReport cmd_analyze(const ExperimentConfig& config, const Log& log = {});

/// Mean temporal-gate fraction over active neurons whose modal pair axis is
/// `axis`; NaN when there are none.
double mean_temporal_fraction(const RoutingReport& report, PairAxis axis);

}  // namespace dsts
