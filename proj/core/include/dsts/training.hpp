#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dsts/dataset.hpp"
#include "dsts/model.hpp"

namespace dsts {

struct TrainConfig {
  double lr = 0.1;             // shared step size of all three UDL steps
  double upstream_lr = -1.0;   // meta step size; non-positive means `lr`
  int batch_size = 8;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool udl_enabled = true;
  int eval_batch_size = 64;

  void validate() const;
  double meta_lr() const { return upstream_lr > 0.0 ? upstream_lr : lr; }
};

/// Upstream: scoring kernels and gate logits. Downstream: everything else.
struct ParameterPartition {
  std::vector<std::size_t> upstream;
  std::vector<std::size_t> downstream;
};
ParameterPartition partition_parameters(const Model& model);

/// A labelled sub-batch with the ids of its samples.
struct Batch {
  Tensor clips;
  std::vector<int> labels;
  std::vector<std::int64_t> ids;
};
Batch make_batch(std::span<const VideoSample> samples, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// The three steps of an Upstream-Downstream Learning iteration. Each takes the
// noise for its sub-batch explicitly so a sub-batch can be replayed.

/// d_hat = d - lr * grad_d loss(u, d; train), recorded so that d_hat stays a
/// differentiable function of u. Live parameters are not modified.
struct SimulatedUpdate {
  std::vector<Var> upstream;  // leaves u, in partition order
  std::vector<Var> shadow;    // one Var per parameter slot: u leaves and d_hat
  InnerStep step;
  double loss = 0.0;
};
SimulatedUpdate simulated_update(Model& model, const ParameterPartition& part, const Batch& train,
                                 const NoiseSample& noise, double lr);

/// grad_u loss(stop_grad(u), d_hat(u); val), flowing only through d_hat.
struct MetaGradient {
  std::vector<Tensor> upstream;  // in partition order
  double loss = 0.0;
};
MetaGradient meta_gradient(Model& model, const ParameterPartition& part, const SimulatedUpdate& sim,
                           const Batch& val, const NoiseSample& noise);
/// u' = u - lr * meta gradient, applied to the live upstream parameters.
MetaGradient meta_update(Model& model, const ParameterPartition& part, const SimulatedUpdate& sim, const Batch& val,
                         const NoiseSample& noise, double lr);

/// d' = d - lr * grad_d loss(u', d; train) from the live parameters, which
/// hold u'. Folds the batch statistics into the BN running stats. Returns the
/// loss before the step.
double actual_update(Model& model, const ParameterPartition& part, const Batch& train, const NoiseSample& noise,
                     double lr);

/// One gradient step on every parameter; the ablation without UDL.
double joint_update(Model& model, const Batch& train, const NoiseSample& noise, double lr);

struct IterationStats {
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a meta step
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> val_ids;
};

/// Splits `batch` into a first half D_train (floor(B/2) samples) and a
/// second half D_val, then runs simulated, meta and actual updates. Without
/// UDL, or for models without upstream parameters, only D_train is used for
/// a single step. Noise comes from `rng`.
IterationStats udl_iteration(Model& model, const ParameterPartition& part, std::span<const VideoSample> samples,
                             std::span<const std::size_t> batch, const TrainConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Evaluation and the epoch loop

/// Eval-mode pass over a sample set.
struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
  /// Per layer, per sample: selected neuron and eval-mode gate bits (C each).
  std::vector<std::vector<int>> selected;
  std::vector<std::vector<std::vector<double>>> masks;
  std::vector<double> routing_entropy;  // per layer, mean over samples
};
Evaluation evaluate(Model& model, std::span<const VideoSample> samples, int batch_size = 64);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // loss on the held-out split
  double eval_accuracy = 0.0;
  std::vector<double> routing_entropy;                 // per layer
  std::vector<std::vector<std::int64_t>> activations;  // [layer][neuron], held-out split
  std::vector<std::vector<double>> temporal_fraction;  // [layer][neuron], eval-mode gate bits
};

/// Fraction of eval-mode gate bits equal to 1, per layer and neuron.
std::vector<std::vector<double>> temporal_gate_fractions(const Model& model);

/// Metrics of the current model on the held-out split, with `epoch` and
/// `train_loss` filled in by the caller.
EpochMetrics epoch_metrics(Model& model, std::span<const VideoSample> held_out, int batch_size);

void write_metrics_header(std::ostream& out, const ModelConfig& config);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

struct TrainOptions {
  /// Called after every epoch, and once for epoch 0 before training.
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Where to dump the model if a loss turns non-finite.
  std::filesystem::path dump_path;
  /// Stop once held-out accuracy reaches this value; disabled when > 1.
  double stop_at_accuracy = 2.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;  // epoch 0 is the initialization
};

/// Trains in place. Each epoch shuffles the training split and walks it in
/// consecutive batches, dropping the remainder. Deterministic given
/// config.seed and the model's initial state.
TrainResult train(Model& model, const TrainConfig& config, std::span<const VideoSample> train_set,
                  std::span<const VideoSample> held_out, const TrainOptions& options = {});

}  // namespace dsts
