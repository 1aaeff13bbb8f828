#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsts/autograd.hpp"
#include "dsts/nn.hpp"
#include "dsts/random.hpp"
#include "dsts/selection.hpp"

namespace dsts {

/// Architecture of the end-to-end classifier: a two-stage strided 3-D conv
/// backbone, the DSTS module, global average pooling and a linear head.
struct ModelConfig {
  int in_channels = 1;
  int clip_t = 8;
  int clip_h = 16;
  int clip_w = 16;
  int channels = 8;  // channels of the backbone features, N_in == N_out
  int neurons = 10;
  int layers = 3;
  int classes = 8;
  double temperature = 1.0;

  // Ablation switches. dsts_enabled=false drops the module entirely.
  bool dsts_enabled = true;
  bool sts_enabled = true;      // false: one 3x3x3 conv + BN + ReLU per neuron
  bool gates_enabled = true;    // false: fixed half spatial / half temporal split
  bool synapse_enabled = true;  // false: run every neuron and average

  /// Standard deviation for scoring kernels; non-positive selects
  /// 0.01 / sqrt(channels * T * H * W) of the feature map.
  double score_init_std = -1.0;

  void validate() const;
  /// Backbone output shape without the batch dim: C x T x H x W.
  Shape feature_shape() const;
  Shape clip_shape() const { return {in_channels, clip_t, clip_h, clip_w}; }
};

enum class Role { Upstream, Downstream };

struct ParamInfo {
  std::string name;
  Role role;
};

/// Gumbel and gate noise for one forward pass over a batch. Drawing it up
/// front lets a pass be replayed with exactly the same stochastic decisions.
struct LayerNoise {
  Tensor gumbel;  // B x N
  Tensor gates;   // B x N x C
};
struct NoiseSample {
  std::vector<LayerNoise> layers;
};
NoiseSample draw_noise(const ModelConfig& config, std::int64_t batch, Rng& rng);

/// Per-layer record of routing decisions for a batch.
struct LayerTrace {
  std::vector<int> selected;  // per sample
  Tensor impulses;            // B x N
  Tensor routing_probs;       // B x N, softmax(impulses / temperature)
  Tensor masks;               // B x C gate bits of the selected neuron
};
struct RoutingTrace {
  std::vector<LayerTrace> layers;
};

/// Counts neuron executions: runs[layer][neuron] is the number of samples the
/// neuron's spatial/temporal (or 3-D) convolutions were applied to.
struct ExecutionCounter {
  std::vector<std::vector<std::int64_t>> runs;
  std::int64_t layer_total(std::size_t layer) const;
};

struct ForwardOptions {
  nn::Mode mode = nn::Mode::Eval;
  const NoiseSample* noise = nullptr;  // required in train mode when DSTS is on
  bool update_stats = false;           // fold batch statistics into BN running stats
  bool record_routing = false;         // add selections to the model's activation counts
  RoutingTrace* trace = nullptr;
  ExecutionCounter* counter = nullptr;
  StraightThroughAnchors* anchors = nullptr;  // train mode only
};

struct ForwardResult {
  Var logits;
  RoutingTrace trace;
};

class Model {
 public:
  /// Parameter slots of one specialized neuron. Slots that do not exist
  /// under the current ablation switches are nullopt.
  struct NeuronSlots {
    std::size_t score;
    std::optional<std::size_t> spatial, temporal, gates;
    std::optional<std::size_t> conv3d;  // STS disabled
    // Branch a is the spatial (or 3-D) branch, b the temporal one.
    std::size_t bn_a_gamma, bn_a_beta, stats_a;
    std::optional<std::size_t> bn_b_gamma, bn_b_beta, stats_b;
  };
  struct LayerSlots {
    std::vector<NeuronSlots> neurons;
    std::size_t fusion;
  };

  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<ParamInfo>& param_info() const { return info_; }
  std::optional<std::size_t> find_param(const std::string& name) const;

  std::vector<nn::BatchNormStats>& bn_stats() { return stats_; }
  const std::vector<nn::BatchNormStats>& bn_stats() const { return stats_; }
  const std::vector<std::string>& bn_names() const { return stats_names_; }

  const LayerSlots& layer_slots(int layer) const { return layers_.at(static_cast<std::size_t>(layer)); }

  /// One Var per parameter, in slot order.
  std::vector<Var> parameter_vars(bool requires_grad) const;

  /// Element count over all parameters.
  std::int64_t parameter_count() const;
  /// Element count over scoring kernels and gate logits.
  std::int64_t routing_parameter_count() const;

  const std::vector<std::vector<std::int64_t>>& activation_counts() const { return activation_counts_; }
  void reset_activation_counts();

  // ------------------------------------------------------------------------
  // Forward pieces. `p` holds one Var per parameter slot; it may be the live
  // parameters, detached copies or simulated-update values.

  ForwardResult forward(std::span<const Var> p, const Tensor& clips, const ForwardOptions& opts);

  /// Raw clips (B x Cin x T x H x W) to backbone features.
  Var backbone_forward(std::span<const Var> p, const Var& clips, const ForwardOptions& opts);
  /// Layers chained, plus the skip connection from `features`.
  Var module_forward(std::span<const Var> p, const Var& features, const ForwardOptions& opts);
  Var layer_forward(std::span<const Var> p, int layer, const Var& x, const ForwardOptions& opts,
                    LayerTrace* trace);
  /// B x N impulse matrix of a layer.
  Var impulses(std::span<const Var> p, int layer, const Var& x) const;
  /// One neuron over all rows of `x`. `gate_noise` is B x C (train mode);
  /// `mask_out`, when given, receives the B x C gate bits used.
  Var neuron_forward(std::span<const Var> p, int layer, int neuron, const Var& x, const Tensor* gate_noise,
                     nn::Mode mode, bool update_stats, Tensor* mask_out = nullptr,
                     StraightThroughAnchors* anchors = nullptr);

 private:
  std::size_t add_param(std::string name, Role role, Tensor value);
  std::size_t add_stats(std::string name, std::int64_t channels);
  Var bn(std::span<const Var> p, const Var& x, std::size_t gamma, std::size_t beta, std::size_t stats,
         nn::Mode mode, bool update_stats);

  ModelConfig config_;
  std::vector<Tensor> params_;
  std::vector<ParamInfo> info_;
  std::vector<nn::BatchNormStats> stats_;
  std::vector<std::string> stats_names_;

  std::size_t conv1_, bn1_gamma_, bn1_beta_, stats1_;
  std::size_t conv2_, bn2_gamma_, bn2_beta_, stats2_;
  std::vector<LayerSlots> layers_;
  std::size_t head_weight_, head_bias_;

  std::vector<std::vector<std::int64_t>> activation_counts_;
};

/// Splits channels into the fixed gates-off pattern: first half spatial (0),
/// remainder temporal (1).
std::vector<double> fixed_half_split(std::int64_t channels);

/// Channel-wise split of x by B x C bits: (X_S, X_T) = ((1 - b) x, b x).
std::pair<Var, Var> split_channels(const Var& x, const Var& bits);

}  // namespace dsts
