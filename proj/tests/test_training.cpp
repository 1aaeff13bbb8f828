#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "dsts/checkpoint.hpp"
#include "dsts/error.hpp"
#include "dsts/nn.hpp"
#include "dsts/training.hpp"
#include "support/model_fixtures.hpp"
#include "support/oracles.hpp"
#include "support/udl_oracle.hpp"

using namespace dsts;
using fixtures::randomize;
using fixtures::tiny_config;
using oracle::ComposedObjective;
using oracle::kink_aware_fd;
using oracle::train_mode;

namespace {

std::vector<VideoSample> random_samples(const ModelConfig& c, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<VideoSample> out;
  for (int i = 0; i < count; ++i) {
    VideoSample s;
    s.id = i;
    s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.classes)));
    s.pair_id = s.label / 2;
    s.clip = Tensor(c.clip_shape(), 0.0);
    for (auto& v : s.clip.storage()) v = rng.uniform();
    out.push_back(std::move(s));
  }
  return out;
}

// Brightness encodes the class, so even the tiny model can learn it.
std::vector<VideoSample> brightness_samples(const ModelConfig& c, int count, std::uint64_t seed) {
  auto out = random_samples(c, count, seed);
  for (auto& s : out) {
    for (auto& v : s.clip.storage()) v = 0.3 * s.label + 0.2 * v;
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

bool same_state(const Model& a, const Model& b) {
  if (a.params() != b.params()) return false;
  for (std::size_t i = 0; i < a.bn_stats().size(); ++i) {
    if (a.bn_stats()[i].running_mean != b.bn_stats()[i].running_mean) return false;
    if (a.bn_stats()[i].running_var != b.bn_stats()[i].running_var) return false;
  }
  return true;
}

struct Fixture {
  ModelConfig config;
  Model model;
  ParameterPartition part;
  std::vector<VideoSample> samples;
  Batch train, val;
  NoiseSample train_noise, val_noise;

  explicit Fixture(ModelConfig c, std::uint64_t seed = 61)
      : config(c), model(c, seed), part(), samples(random_samples(c, 8, seed + 1)) {
    randomize(model, seed + 2);
    part = partition_parameters(model);
    const auto a = iota(0, 4), b = iota(4, 8);
    train = make_batch(samples, a);
    val = make_batch(samples, b);
    Rng rng(seed + 3);
    train_noise = draw_noise(c, 4, rng);
    val_noise = draw_noise(c, 4, rng);
  }
};

}  // namespace

TEST(Partition, DefaultModelHasSixtyUpstreamTensors) {
  const Model m(ModelConfig{}, 1);
  const auto part = partition_parameters(m);
  EXPECT_EQ(part.upstream.size(), 60u);  // a scoring kernel and gate logits per neuron, 10 x 3
  std::int64_t elements = 0;
  for (auto i : part.upstream) {
    const auto& name = m.param_info()[i].name;
    EXPECT_TRUE(name.ends_with(".score") || name.ends_with(".gates")) << name;
    elements += m.params()[i].size();
  }
  EXPECT_EQ(elements, m.routing_parameter_count());
  std::int64_t rest = 0;
  for (auto i : part.downstream) rest += m.params()[i].size();
  EXPECT_EQ(elements + rest, m.parameter_count());
}

TEST(Partition, WithoutDstsEverythingIsDownstream) {
  ModelConfig c;
  c.dsts_enabled = false;
  const Model m(c, 1);
  const auto part = partition_parameters(m);
  EXPECT_TRUE(part.upstream.empty());
  EXPECT_EQ(part.downstream.size(), m.params().size());
}

TEST(SimulatedUpdate, ZeroStepReproducesDownstreamAndLeavesModelAlone) {
  Fixture f(tiny_config(3, 2, 4));
  const Model before = f.model;
  const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, 0.0);
  EXPECT_TRUE(same_state(f.model, before));
  for (std::size_t k = 0; k < f.part.downstream.size(); ++k) {
    EXPECT_EQ(sim.shadow[f.part.downstream[k]].value(), f.model.params()[f.part.downstream[k]]);
  }
  for (std::size_t k = 0; k < f.part.upstream.size(); ++k) {
    EXPECT_EQ(sim.upstream[k].value(), f.model.params()[f.part.upstream[k]]);
  }
}

TEST(SimulatedUpdate, TakesOneGradientStepOnDownstream) {
  Fixture f(tiny_config(3, 2, 4));
  const double lr = 0.05;
  const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, lr);

  std::vector<Var> p = f.model.parameter_vars(true);
  const Var loss = nn::cross_entropy(f.model.forward(p, f.train.clips, train_mode(f.train_noise)).logits,
                                     f.train.labels);
  EXPECT_EQ(loss.value().item(), sim.loss);
  const Gradients g = grad(loss, p);
  for (auto i : f.part.downstream) {
    Tensor expected = f.model.params()[i];
    if (g.reached[i]) {
      for (std::int64_t j = 0; j < expected.size(); ++j) expected[j] -= lr * g[i].value()[j];
    }
    EXPECT_LT(oracle::relative_error(sim.shadow[i].value(), expected), 1e-12) << f.model.param_info()[i].name;
  }
}

TEST(MetaGradient, VanishesWithZeroInnerStep) {
  Fixture f(tiny_config(3, 2, 4));
  const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, 0.0);
  const auto meta = meta_gradient(f.model, f.part, sim, f.val, f.val_noise);
  for (const auto& g : meta.upstream) {
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(MetaGradient, MatchesFiniteDifferencesOfComposedObjective) {
  for (std::uint64_t seed : {61, 62, 63, 64})
  for (bool synapse : {true, false}) {
    ModelConfig c = tiny_config(3, 2, 4);
    c.synapse_enabled = synapse;
    Fixture f(c, seed);
    const double lr = 0.1;
    const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, lr);
    const auto meta = meta_gradient(f.model, f.part, sim, f.val, f.val_noise);

    ComposedObjective objective(f.model, f.part, f.train, f.val, f.train_noise, f.val_noise, lr);
    EXPECT_NEAR(objective(f.model.params()), meta.loss, 1e-12);
    auto fn = [&](const std::vector<Tensor>& v) { return objective(v); };
    double norm = 0.0;
    for (std::size_t k = 0; k < f.part.upstream.size(); ++k) {
      const Tensor fd = kink_aware_fd(fn, f.model.params(), f.part.upstream[k], 1e-5);
      EXPECT_LT(oracle::relative_error(meta.upstream[k], fd), 1e-3)
          << f.model.param_info()[f.part.upstream[k]].name << " synapse=" << synapse << " seed=" << seed;
      for (double v : meta.upstream[k].data()) norm += v * v;
    }
    EXPECT_GT(norm, 0.0);
  }
}

TEST(MetaUpdate, MovesOnlyUpstreamParameters) {
  Fixture f(tiny_config(3, 2, 4));
  const Model before = f.model;
  const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, 0.1);
  const auto meta = meta_update(f.model, f.part, sim, f.val, f.val_noise, 0.5);
  for (auto i : f.part.downstream) EXPECT_EQ(f.model.params()[i], before.params()[i]);
  for (std::size_t k = 0; k < f.part.upstream.size(); ++k) {
    const auto i = f.part.upstream[k];
    for (std::int64_t j = 0; j < meta.upstream[k].size(); ++j) {
      EXPECT_EQ(f.model.params()[i][j], before.params()[i][j] - 0.5 * meta.upstream[k][j]);
    }
  }
  for (std::size_t i = 0; i < before.bn_stats().size(); ++i) {
    EXPECT_EQ(f.model.bn_stats()[i].running_mean, before.bn_stats()[i].running_mean);
  }
}

TEST(ActualUpdate, WithUnchangedUpstreamEqualsSimulatedStep) {
  Fixture f(tiny_config(3, 2, 4));
  const double lr = 0.05;
  const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, lr);
  const double loss = actual_update(f.model, f.part, f.train, f.train_noise, lr);
  EXPECT_EQ(loss, sim.loss);
  for (auto i : f.part.downstream) {
    EXPECT_EQ(f.model.params()[i], sim.shadow[i].value()) << f.model.param_info()[i].name;
  }
}

TEST(ActualUpdate, UsesUpdatedUpstreamAndFoldsStatistics) {
  Fixture f(tiny_config(3, 2, 4));
  const Model before = f.model;
  const double lr = 0.05;
  const auto sim = simulated_update(f.model, f.part, f.train, f.train_noise, lr);
  meta_update(f.model, f.part, sim, f.val, f.val_noise, 0.5);
  const Model after_meta = f.model;

  Model oracle_model = after_meta;
  std::vector<Var> p = oracle_model.parameter_vars(true);
  ForwardOptions opts = train_mode(f.train_noise);
  opts.update_stats = true;
  const Var loss = nn::cross_entropy(oracle_model.forward(p, f.train.clips, opts).logits, f.train.labels);
  const Gradients g = grad(loss, p);

  actual_update(f.model, f.part, f.train, f.train_noise, lr);
  for (auto i : f.part.upstream) EXPECT_EQ(f.model.params()[i], after_meta.params()[i]);
  for (auto i : f.part.downstream) {
    Tensor expected = after_meta.params()[i];
    if (g.reached[i]) {
      for (std::int64_t j = 0; j < expected.size(); ++j) expected[j] -= lr * g[i].value()[j];
    }
    EXPECT_LT(oracle::relative_error(f.model.params()[i], expected), 1e-6) << f.model.param_info()[i].name;
  }
  for (std::size_t i = 0; i < before.bn_stats().size(); ++i) {
    EXPECT_EQ(f.model.bn_stats()[i].running_mean, oracle_model.bn_stats()[i].running_mean);
    EXPECT_EQ(f.model.bn_stats()[i].running_var, oracle_model.bn_stats()[i].running_var);
  }
  EXPECT_NE(f.model.bn_stats()[0].running_mean, before.bn_stats()[0].running_mean);
}

TEST(Iteration, SplitsBatchIntoDisjointHalves) {
  const ModelConfig c = tiny_config(2, 1, 4);
  Model m(c, 3);
  const auto samples = random_samples(c, 10, 4);
  const auto part = partition_parameters(m);
  TrainConfig cfg;
  Rng rng(5);
  const std::vector<std::size_t> batch = {3, 1, 4, 9, 5};
  const auto stats = udl_iteration(m, part, samples, batch, cfg, rng);
  EXPECT_EQ(stats.train_ids, (std::vector<std::int64_t>{3, 1}));
  EXPECT_EQ(stats.val_ids, (std::vector<std::int64_t>{4, 9, 5}));
  EXPECT_TRUE(std::isfinite(stats.val_loss));

  const std::vector<std::size_t> repeated = {2, 7, 2, 6};
  EXPECT_THROW(udl_iteration(m, part, samples, repeated, cfg, rng), IntegrityError);
}

TEST(Iteration, IsDeterministic) {
  const ModelConfig c = tiny_config(3, 2, 4);
  const auto samples = random_samples(c, 8, 6);
  const auto batch = iota(0, 8);
  TrainConfig cfg;
  auto run = [&] {
    Model m(c, 7);
    randomize(m, 8);
    Rng rng(9);
    udl_iteration(m, partition_parameters(m), samples, batch, cfg, rng);
    return m;
  };
  EXPECT_TRUE(same_state(run(), run()));
}

TEST(Iteration, EqualsTheThreeStepsInOrder) {
  const ModelConfig c = tiny_config(3, 2, 4);
  const auto samples = random_samples(c, 8, 10);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.upstream_lr = 0.2;

  Model a(c, 11);
  randomize(a, 12);
  Model b = a;
  const auto part = partition_parameters(a);
  Rng rng_a(13), rng_b(13);
  udl_iteration(a, part, samples, iota(0, 8), cfg, rng_a);

  const Batch train = make_batch(samples, iota(0, 4));
  const Batch val = make_batch(samples, iota(4, 8));
  const NoiseSample tn = draw_noise(c, 4, rng_b);
  const NoiseSample vn = draw_noise(c, 4, rng_b);
  const auto sim = simulated_update(b, part, train, tn, 0.05);
  meta_update(b, part, sim, val, vn, 0.2);
  actual_update(b, part, train, tn, 0.05);
  EXPECT_TRUE(same_state(a, b));
}

TEST(Iteration, WithoutUdlIsOneJointStepOnTrainHalf) {
  const ModelConfig c = tiny_config(3, 2, 4);
  const auto samples = random_samples(c, 8, 14);
  TrainConfig cfg;
  cfg.udl_enabled = false;

  Model a(c, 15);
  randomize(a, 16);
  Model b = a;
  Rng rng_a(17), rng_b(17);
  const auto stats = udl_iteration(a, partition_parameters(a), samples, iota(0, 8), cfg, rng_a);
  EXPECT_TRUE(std::isnan(stats.val_loss));

  const NoiseSample tn = draw_noise(c, 4, rng_b);
  joint_update(b, make_batch(samples, iota(0, 4)), tn, cfg.lr);
  EXPECT_TRUE(same_state(a, b));
}

TEST(Iteration, WithoutUpstreamParametersSkipsMetaStep) {
  ModelConfig c = tiny_config();
  c.dsts_enabled = false;
  const auto samples = random_samples(c, 8, 18);
  Model a(c, 19);
  Model b = a;
  Rng rng_a(20), rng_b(20);
  const auto stats = udl_iteration(a, partition_parameters(a), samples, iota(0, 8), TrainConfig{}, rng_a);
  EXPECT_TRUE(std::isnan(stats.val_loss));
  joint_update(b, make_batch(samples, iota(0, 4)), draw_noise(c, 4, rng_b), TrainConfig{}.lr);
  EXPECT_TRUE(same_state(a, b));
}

TEST(TrainConfig, RejectsInvalidValues) {
  TrainConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(TrainConfig{}.meta_lr(), TrainConfig{}.lr);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  const ModelConfig c = tiny_config(2, 1, 4);
  const auto samples = random_samples(c, 16, 21);
  Model m(c, 22);
  const Model init = m;
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto result = train(m, cfg, samples, samples);
  ASSERT_EQ(result.history.size(), 1u);
  EXPECT_EQ(result.history[0].epoch, 0);
  EXPECT_TRUE(same_state(m, init));
}

TEST(Train, ConstantLabelIsLearnedQuickly) {
  const ModelConfig c = tiny_config(2, 1, 4);
  auto samples = random_samples(c, 32, 23);
  for (auto& s : samples) s.label = 2;
  Model m(c, 24);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 0.1;
  const auto result = train(m, cfg, samples, samples);
  EXPECT_EQ(result.history.back().eval_accuracy, 1.0);
}

TEST(Train, HeldOutLossDecreases) {
  const ModelConfig c = tiny_config(3, 2, 4);
  const auto train_set = brightness_samples(c, 64, 25);
  const auto held_out = brightness_samples(c, 32, 26);
  Model m(c, 27);
  TrainConfig cfg;
  cfg.epochs = 25;  // 8 iterations per epoch, 200 in total
  cfg.lr = 0.05;
  std::vector<int> epochs;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochMetrics& e) { epochs.push_back(e.epoch); };
  const auto result = train(m, cfg, train_set, held_out, opts);
  ASSERT_EQ(result.history.size(), 26u);
  EXPECT_EQ(epochs.size(), 26u);
  EXPECT_LE(result.history.back().val_loss, result.history.front().val_loss);
  EXPECT_TRUE(std::isnan(result.history.front().train_loss));
  for (std::size_t e = 1; e < result.history.size(); ++e) {
    EXPECT_TRUE(std::isfinite(result.history[e].train_loss));
    std::int64_t routed = 0;
    for (auto n : result.history[e].activations[1]) routed += n;
    EXPECT_EQ(routed, 32);
  }
}

TEST(Train, StopsEarlyAtTargetAccuracy) {
  const ModelConfig c = tiny_config(2, 1, 4);
  auto samples = random_samples(c, 16, 28);
  for (auto& s : samples) s.label = 0;
  Model m(c, 29);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 0.1;
  TrainOptions opts;
  opts.stop_at_accuracy = 1.0;
  const auto result = train(m, cfg, samples, samples, opts);
  EXPECT_LT(result.history.size(), 51u);
  EXPECT_EQ(result.history.back().eval_accuracy, 1.0);
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const ModelConfig c = tiny_config(2, 1, 4);
  const auto samples = random_samples(c, 16, 30);
  Model m(c, 31);
  m.params()[*m.find_param("head.weight")][0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  TrainOptions opts;
  opts.dump_path = std::filesystem::temp_directory_path() / "dsts_test_nan_dump.bin";
  std::filesystem::remove(opts.dump_path);
  try {
    train(m, cfg, samples, samples, opts);
    FAIL() << "expected a NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, iteration 0"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(std::filesystem::exists(opts.dump_path));
  EXPECT_NO_THROW(load_checkpoint(opts.dump_path));
  std::filesystem::remove(opts.dump_path);
}

TEST(Evaluate, EntropyIsMaximalForEqualImpulses) {
  const ModelConfig c = tiny_config(4, 2, 4);
  Model m(c, 32);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.param_info()[i].name.ends_with(".score")) for (auto& v : m.params()[i].storage()) v = 0.0;
  }
  const auto samples = random_samples(c, 6, 33);
  const auto ev = evaluate(m, samples, 4);
  ASSERT_EQ(ev.routing_entropy.size(), 2u);
  for (double h : ev.routing_entropy) EXPECT_NEAR(h, std::log(4.0), 1e-12);
  for (const auto& layer : ev.selected) {
    for (int s : layer) EXPECT_EQ(s, 0);  // ties go to the first neuron
  }
  EXPECT_EQ(ev.predictions.size(), 6u);
}

TEST(Metrics, GateFractionsFollowSwitches) {
  ModelConfig c = tiny_config(2, 1, 4);
  Model m(c, 34);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.param_info()[i].name.ends_with(".gates")) {
      auto& g = m.params()[i];
      for (std::int64_t j = 0; j < g.size(); ++j) g[j] = j == 0 ? 1.0 : -1.0;
    }
  }
  EXPECT_EQ(temporal_gate_fractions(m), (std::vector<std::vector<double>>{{0.25, 0.25}}));
  c.gates_enabled = false;
  EXPECT_EQ(temporal_gate_fractions(Model(c, 34)), (std::vector<std::vector<double>>{{0.5, 0.5}}));
  c.sts_enabled = false;
  EXPECT_EQ(temporal_gate_fractions(Model(c, 34)), (std::vector<std::vector<double>>{{0.0, 0.0}}));
}

TEST(Metrics, CsvRowMatchesHeader) {
  const ModelConfig c = tiny_config(2, 2, 4);
  Model m(c, 35);
  EpochMetrics e = epoch_metrics(m, random_samples(c, 5, 36), 64);
  e.epoch = 3;
  e.train_loss = 1.5;
  std::ostringstream head, row;
  write_metrics_header(head, c);
  write_metrics_row(row, e);
  auto commas = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(commas(head.str()), commas(row.str()));
  EXPECT_EQ(commas(head.str()), 3 + 2 + 4 + 4);
  EXPECT_TRUE(row.str().starts_with("3,1.5,"));
}




