#include "dsts/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "dsts/checkpoint.hpp"
#include "dsts/error.hpp"

namespace dsts {

namespace {

const char* flag(bool b) { return b ? "true" : "false"; }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  return out;
}

void say(const Log& log, const std::string& line) {
  if (log) log(line);
}

const std::set<std::string> kSwitches = {"dsts", "sts", "gates", "synapse", "udl"};

bool& switch_ref(ExperimentConfig& c, const std::string& name) {
  if (name == "dsts") return c.model.dsts_enabled;
  if (name == "sts") return c.model.sts_enabled;
  if (name == "gates") return c.model.gates_enabled;
  if (name == "synapse") return c.model.synapse_enabled;
  if (name == "udl") return c.train.udl_enabled;
  throw ConfigError("unknown ablation switch '" + name + "'");
}

std::string combination_name(const ExperimentConfig& c) {
  if (!c.model.dsts_enabled) return "baseline";
  std::string name;
  auto add = [&name](const char* key, bool on) { name += (on ? "+" : "-") + std::string(key); };
  add("sts", c.model.sts_enabled);
  add("gates", c.model.gates_enabled);
  add("synapse", c.model.synapse_enabled);
  add("udl", c.train.udl_enabled);
  return name;
}

DatasetFiles load_data(const ExperimentConfig& config) {
  if (!std::filesystem::exists(config.data_dir / "manifest.txt")) {
    throw FileError("no dataset in " + config.data_dir.string() + " (run the generate command first)");
  }
  return load_dataset(config.data_dir);
}

// Adopts the geometry of a dataset loaded from disk.
ExperimentConfig with_dataset(ExperimentConfig config, const DatasetFiles& files) {
  config.data = files.spec;
  config.data_seed = files.seed;
  config.resolve();
  return config;
}

TrainOutcome train_on(const ExperimentConfig& config, const DatasetFiles& files, const Log& log) {
  const DatasetSplit split = split_dataset(files.samples, files.spec.train_fraction, files.seed);
  std::filesystem::create_directories(config.out_dir);

  KeyValues echo = config.to_key_values();
  echo.set("data_hash", std::to_string(content_hash(files.samples)));
  const std::string echo_text = echo.to_text();
  open_output(config.out_dir / "config.txt") << echo_text;

  Model model(config.model, config.seed);
  TrainConfig tc = config.train;
  tc.seed = config.seed;

  std::ofstream metrics = open_output(config.out_dir / "metrics.csv");
  write_metrics_header(metrics, config.model);
  TrainOptions options;
  options.dump_path = config.out_dir / "nan_dump.bin";
  options.on_epoch = [&](const EpochMetrics& m) {
    write_metrics_row(metrics, m);
    metrics.flush();
    std::ostringstream line;
    line << "epoch " << m.epoch << " train_loss " << format_double(m.train_loss) << " val_loss "
         << format_double(m.val_loss) << " accuracy " << format_double(m.eval_accuracy);
    say(log, line.str());
  };
  const TrainResult result = train(model, tc, split.train, split.test, options);
  save_checkpoint(config.out_dir / "checkpoint.bin", model, echo_text);

  TrainOutcome outcome;
  outcome.history = result.history;
  outcome.final_accuracy = result.history.back().eval_accuracy;
  outcome.routing_parameters = model.routing_parameter_count();
  return outcome;
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::apply(const KeyValues& kv) {
  static const std::set<std::string> known = {
      "classes",     "samples_per_class", "frames",     "height",     "width",      "pixel_noise",
      "train_fraction", "square_size",    "travel",     "jitter",     "notch",      "background",
      "foreground",  "channels",          "neurons",    "layers",     "temperature", "score_init_std",
      "dsts",        "sts",               "gates",      "synapse",    "udl",        "lr",
      "upstream_lr", "batch_size",        "epochs",     "eval_batch_size", "seed", "seeds",
      "data_seed",   "data",              "out",        "checkpoint", "grid",       "in_channels",
      "clip_t",      "clip_h",            "clip_w"};
  for (const auto& [key, value] : kv.entries()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  kv.get("classes", data.classes);
  kv.get("samples_per_class", data.samples_per_class);
  kv.get("frames", data.frames);
  kv.get("height", data.height);
  kv.get("width", data.width);
  kv.get("pixel_noise", data.pixel_noise);
  kv.get("train_fraction", data.train_fraction);
  kv.get("square_size", data.square_size);
  kv.get("travel", data.travel);
  kv.get("jitter", data.jitter);
  kv.get("notch", data.notch);
  kv.get("background", data.background);
  kv.get("foreground", data.foreground);
  // in_channels and clip_* are echoes of the dataset dims; channels is the
  // feature width of the model.
  kv.get("in_channels", data.channels);
  kv.get("channels", model.channels);
  kv.get("neurons", model.neurons);
  kv.get("layers", model.layers);
  kv.get("temperature", model.temperature);
  kv.get("score_init_std", model.score_init_std);
  kv.get("dsts", model.dsts_enabled);
  kv.get("sts", model.sts_enabled);
  kv.get("gates", model.gates_enabled);
  kv.get("synapse", model.synapse_enabled);
  kv.get("udl", train.udl_enabled);
  kv.get("lr", train.lr);
  kv.get("upstream_lr", train.upstream_lr);
  kv.get("batch_size", train.batch_size);
  kv.get("epochs", train.epochs);
  kv.get("eval_batch_size", train.eval_batch_size);
  kv.get("seed", seed);
  kv.get("data_seed", data_seed);
  if (const std::string* s = kv.find("seeds")) {
    seeds.clear();
    for (const auto& item : split_list(*s)) {
      KeyValues one;
      one.set("seeds", item);
      std::uint64_t v = 0;
      one.get("seeds", v);
      seeds.push_back(v);
    }
  }
  std::string path;
  if (kv.get("data", path)) data_dir = path;
  if (kv.get("out", path)) out_dir = path;
  if (kv.get("checkpoint", path)) checkpoint = path;
  if (const std::string* g = kv.find("grid")) grid = split_list(*g);
}

void ExperimentConfig::resolve() {
  data.validate();
  model.in_channels = data.channels;
  model.clip_t = data.frames;
  model.clip_h = data.height;
  model.clip_w = data.width;
  model.classes = data.classes;
  model.validate();
  train.validate();
  for (const auto& g : grid) {
    if (!kSwitches.count(g)) throw ConfigError("unknown ablation switch '" + g + "'");
  }
}

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  kv.set("classes", std::to_string(data.classes));
  kv.set("samples_per_class", std::to_string(data.samples_per_class));
  kv.set("in_channels", std::to_string(data.channels));
  kv.set("frames", std::to_string(data.frames));
  kv.set("height", std::to_string(data.height));
  kv.set("width", std::to_string(data.width));
  kv.set("pixel_noise", format_double(data.pixel_noise));
  kv.set("train_fraction", format_double(data.train_fraction));
  kv.set("square_size", std::to_string(data.square_size));
  kv.set("travel", std::to_string(data.travel));
  kv.set("jitter", std::to_string(data.jitter));
  kv.set("notch", std::to_string(data.notch));
  kv.set("background", format_double(data.background));
  kv.set("foreground", format_double(data.foreground));
  kv.set("channels", std::to_string(model.channels));
  kv.set("neurons", std::to_string(model.neurons));
  kv.set("layers", std::to_string(model.layers));
  kv.set("temperature", format_double(model.temperature));
  kv.set("score_init_std", format_double(model.score_init_std));
  kv.set("dsts", flag(model.dsts_enabled));
  kv.set("sts", flag(model.sts_enabled));
  kv.set("gates", flag(model.gates_enabled));
  kv.set("synapse", flag(model.synapse_enabled));
  kv.set("udl", flag(train.udl_enabled));
  kv.set("lr", format_double(train.lr));
  kv.set("upstream_lr", format_double(train.upstream_lr));
  kv.set("batch_size", std::to_string(train.batch_size));
  kv.set("epochs", std::to_string(train.epochs));
  kv.set("eval_batch_size", std::to_string(train.eval_batch_size));
  kv.set("seed", std::to_string(seed));
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  kv.set("seeds", s);
  kv.set("data_seed", std::to_string(data_seed));
  kv.set("data", data_dir.string());
  kv.set("out", out_dir.string());
  if (!checkpoint.empty()) kv.set("checkpoint", checkpoint.string());
  std::string g;
  for (std::size_t i = 0; i < grid.size(); ++i) g += (i ? "," : "") + grid[i];
  if (!g.empty()) kv.set("grid", g);
  return kv;
}

// ---------------------------------------------------------------------------

GenerateOutcome cmd_generate(const ExperimentConfig& config, const Log& log) {
  config.data.validate();
  const auto samples = generate_dataset(config.data, config.seed);
  save_dataset(config.out_dir, config.data, config.seed, samples);
  ExperimentConfig echo = config;
  echo.data_seed = config.seed;
  KeyValues kv = echo.to_key_values();
  GenerateOutcome outcome{samples.size(), content_hash(samples)};
  kv.set("data_hash", std::to_string(outcome.hash));
  open_output(config.out_dir / "config.txt") << kv.to_text();
  say(log, "wrote " + std::to_string(samples.size()) + " samples to " + config.out_dir.string());
  return outcome;
}

TrainOutcome cmd_train(const ExperimentConfig& config, const Log& log) {
  const DatasetFiles files = load_data(config);
  return train_on(with_dataset(config, files), files, log);
}

double AblationRow::mean() const {
  if (accuracies.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double AblationRow::stddev() const {
  if (accuracies.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double a : accuracies) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const Log& log) {
  if (config.seeds.size() < 3) throw ConfigError("an ablation needs at least 3 seeds");
  if (config.grid.empty()) throw ConfigError("an ablation needs at least one grid switch");
  const DatasetFiles files = load_data(config);
  const ExperimentConfig base = with_dataset(config, files);

  std::vector<AblationRow> rows;
  std::set<std::string> seen;
  const std::size_t combos = std::size_t{1} << base.grid.size();
  for (std::size_t mask = 0; mask < combos; ++mask) {
    ExperimentConfig run = base;
    // Bit clear means the switch is on, so the first row is all-on.
    for (std::size_t k = 0; k < base.grid.size(); ++k) switch_ref(run, base.grid[k]) = ((mask >> k) & 1U) == 0;
    AblationRow row;
    row.name = combination_name(run);
    if (!seen.insert(row.name).second) continue;  // e.g. switches that do nothing without DSTS
    for (auto seed : base.seeds) {
      ExperimentConfig one = run;
      one.seed = seed;
      one.out_dir = base.out_dir / row.name / ("seed" + std::to_string(seed));
      say(log, "run " + row.name + " seed " + std::to_string(seed));
      const TrainOutcome outcome = train_on(one, files, {});
      row.accuracies.push_back(outcome.final_accuracy);
      row.routing_parameters = outcome.routing_parameters;
      say(log, "  accuracy " + format_double(outcome.final_accuracy));
    }
    rows.push_back(std::move(row));
  }

  std::ofstream summary = open_output(base.out_dir / "summary.csv");
  const KeyValues resolved = base.to_key_values();
  for (const auto& [k, v] : resolved.entries()) summary << "# " << k << "=" << v << "\n";
  summary << "combination,routing_parameters,mean_accuracy,std_accuracy";
  for (auto seed : base.seeds) summary << ",seed" << seed;
  summary << "\n";
  for (const auto& row : rows) {
    summary << row.name << ',' << row.routing_parameters << ',' << format_double(row.mean()) << ','
            << format_double(row.stddev());
    for (double a : row.accuracies) summary << ',' << format_double(a);
    summary << "\n";
  }
  return rows;
}

// ---------------------------------------------------------------------------

RoutingReport routing_report(Model& model, std::span<const VideoSample> samples, int classes) {
  const Evaluation ev = evaluate(model, samples, 64);
  const auto fractions = temporal_gate_fractions(model);
  const int pairs = classes / 2;
  RoutingReport report;
  report.samples = static_cast<std::int64_t>(samples.size());
  report.accuracy = ev.accuracy;
  for (std::size_t l = 0; l < ev.selected.size(); ++l) {
    LayerReport layer;
    layer.routing_entropy = ev.routing_entropy[l];
    layer.neurons.resize(static_cast<std::size_t>(model.config().neurons));
    for (auto& n : layer.neurons) n.class_histogram.assign(static_cast<std::size_t>(classes), 0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      NeuronReport& n = layer.neurons[static_cast<std::size_t>(ev.selected[l][s])];
      ++n.activations;
      ++n.class_histogram[static_cast<std::size_t>(samples[s].label)];
    }
    for (std::size_t i = 0; i < layer.neurons.size(); ++i) {
      NeuronReport& n = layer.neurons[i];
      n.temporal_fraction = fractions[l][i];
      if (n.activations == 0) continue;
      std::vector<std::int64_t> by_pair(static_cast<std::size_t>(pairs), 0);
      for (int k = 0; k < classes; ++k) by_pair[static_cast<std::size_t>(k / 2)] += n.class_histogram[static_cast<std::size_t>(k)];
      n.modal_pair = static_cast<int>(std::max_element(by_pair.begin(), by_pair.end()) - by_pair.begin());
      n.purity = static_cast<double>(by_pair[static_cast<std::size_t>(n.modal_pair)]) /
                 static_cast<double>(n.activations);
      // Same convention as the dataset: even pairs differ temporally.
      n.modal_axis = n.modal_pair % 2 == 0 ? PairAxis::Temporal : PairAxis::Spatial;
    }
    report.layers.push_back(std::move(layer));
  }
  return report;
}

void write_report_text(std::ostream& out, const RoutingReport& report) {
  out << "[summary]\nsamples=" << report.samples << "\naccuracy=" << format_double(report.accuracy)
      << "\nlayers=" << report.layers.size() << "\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& layer = report.layers[l];
    out << "\n[layer " << l << "]\nrouting_entropy=" << format_double(layer.routing_entropy) << "\n";
    for (std::size_t i = 0; i < layer.neurons.size(); ++i) {
      const auto& n = layer.neurons[i];
      out << "\n[layer " << l << " neuron " << i << "]\nactivations=" << n.activations << "\nclass_histogram=";
      for (std::size_t k = 0; k < n.class_histogram.size(); ++k) out << (k ? "," : "") << n.class_histogram[k];
      out << "\npurity=" << format_double(n.purity) << "\nmodal_pair=" << n.modal_pair
          << "\nmodal_axis=" << (n.activations > 0 ? to_string(n.modal_axis) : "none")
          << "\ntemporal_fraction=" << format_double(n.temporal_fraction) << "\n";
    }
  }
}

void write_report_csv(std::ostream& out, const RoutingReport& report) {
  out << "layer,neuron,activations,purity,modal_pair,modal_axis,temporal_fraction,routing_entropy";
  const std::size_t classes = report.layers.empty() || report.layers[0].neurons.empty()
                                  ? 0
                                  : report.layers[0].neurons[0].class_histogram.size();
  for (std::size_t k = 0; k < classes; ++k) out << ",class" << k;
  out << "\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& layer = report.layers[l];
    for (std::size_t i = 0; i < layer.neurons.size(); ++i) {
      const auto& n = layer.neurons[i];
      out << l << ',' << i << ',' << n.activations << ',' << format_double(n.purity) << ',' << n.modal_pair << ','
          << (n.activations > 0 ? to_string(n.modal_axis) : "none") << ',' << format_double(n.temporal_fraction)
          << ',' << format_double(layer.routing_entropy);
      for (auto c : n.class_histogram) out << ',' << c;
      out << "\n";
    }
  }
}

RoutingReport cmd_analyze(const ExperimentConfig& config, const Log& log) {
  const std::filesystem::path path = config.checkpoint.empty() ? config.out_dir / "checkpoint.bin" : config.checkpoint;
  LoadedCheckpoint loaded = load_checkpoint(path);
  const DatasetFiles files = load_data(config);
  const ModelConfig& mc = loaded.model.config();
  const Shape clip = files.spec.clip_shape();
  if (mc.clip_shape() != clip || mc.classes != files.spec.classes) {
    throw IntegrityError("checkpoint expects clips " + to_string(mc.clip_shape()) + " and " +
                         std::to_string(mc.classes) + " classes; dataset has " + to_string(clip) + " and " +
                         std::to_string(files.spec.classes));
  }
  if (!mc.dsts_enabled) throw UnsupportedError("the checkpoint has no DSTS module to analyze");
  const DatasetSplit split = split_dataset(files.samples, files.spec.train_fraction, files.seed);
  const RoutingReport report = routing_report(loaded.model, split.test, files.spec.classes);

  std::filesystem::create_directories(config.out_dir);
  std::ofstream text = open_output(config.out_dir / "routing_report.txt");
  text << "[config]\n" << loaded.run_config << "checkpoint=" << path.string() << "\n\n";
  write_report_text(text, report);
  std::ofstream csv = open_output(config.out_dir / "routing_report.csv");
  write_report_csv(csv, report);
  say(log, "analyzed " + std::to_string(report.samples) + " test samples, accuracy " +
               format_double(report.accuracy));
  return report;
}

double mean_temporal_fraction(const RoutingReport& report, PairAxis axis) {
  double sum = 0.0;
  int count = 0;
  for (const auto& layer : report.layers) {
    for (const auto& n : layer.neurons) {
      if (n.activations > 0 && n.modal_axis == axis) {
        sum += n.temporal_fraction;
        ++count;
      }
    }
  }
  return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace dsts
