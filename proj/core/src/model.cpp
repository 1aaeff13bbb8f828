#include "dsts/model.hpp"

#include <algorithm>
#include <cmath>

#include "dsts/error.hpp"
#include "dsts/ops.hpp"
#include "dsts/selection.hpp"

namespace dsts {

using namespace ops;

namespace {

constexpr Triple kBackbonePad{1, 1, 1};
constexpr Triple kBackboneStride{1, 2, 2};
constexpr Triple kSpatialPad{0, 1, 1};
constexpr Triple kTemporalPad{1, 0, 0};
constexpr Triple kFullPad{1, 1, 1};
constexpr Triple kNoPad{0, 0, 0};

std::int64_t downsample(std::int64_t n) { return (n + 2 * 1 - 3) / 2 + 1; }

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.storage()) v = rng.normal(0.0, stddev);
  return t;
}

// He initialization over the kernel's fan-in.
Tensor kernel_init(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(numel(shape) / shape[0]);
  return gaussian(std::move(shape), std::sqrt(2.0 / fan_in), rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1 || channels < 1 || classes < 2) throw ConfigError("channels must be >= 1 and classes >= 2");
  if (neurons < 1) throw ConfigError("a DSTS layer needs at least one neuron");
  if (layers < 1) throw ConfigError("the DSTS module needs at least one layer");
  if (clip_t < 1 || clip_h < 3 || clip_w < 3) throw ConfigError("clip dims too small for the backbone");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

Shape ModelConfig::feature_shape() const {
  return {channels, clip_t, downsample(downsample(clip_h)), downsample(downsample(clip_w))};
}

NoiseSample draw_noise(const ModelConfig& config, std::int64_t batch, Rng& rng) {
  NoiseSample noise;
  if (!config.dsts_enabled) return noise;
  for (int l = 0; l < config.layers; ++l) {
    LayerNoise ln{Tensor(Shape{batch, config.neurons}, sample_gumbel(batch * config.neurons, rng)),
                  Tensor(Shape{batch, config.neurons, config.channels}, 0.0)};
    for (auto& v : ln.gates.storage()) v = rng.normal();
    noise.layers.push_back(std::move(ln));
  }
  return noise;
}

std::int64_t ExecutionCounter::layer_total(std::size_t layer) const {
  std::int64_t total = 0;
  for (auto v : runs.at(layer)) total += v;
  return total;
}

std::vector<double> fixed_half_split(std::int64_t channels) {
  std::vector<double> bits(static_cast<std::size_t>(channels), 0.0);
  for (std::int64_t c = channels / 2; c < channels; ++c) bits[static_cast<std::size_t>(c)] = 1.0;
  return bits;
}

std::pair<Var, Var> split_channels(const Var& x, const Var& bits) {
  if (x.rank() != 5 || bits.shape() != Shape{x.dim(0), x.dim(1)}) {
    throw InputError("split_channels: bits " + to_string(bits.shape()) + " do not match input " +
                     to_string(x.shape()));
  }
  const Var b = broadcast_to(reshape(bits, Shape{x.dim(0), x.dim(1), 1, 1, 1}), x.shape());
  return {mul(x, add_scalar(neg(b), 1.0)), mul(x, b)};
}

// ---------------------------------------------------------------------------

std::size_t Model::add_param(std::string name, Role role, Tensor value) {
  params_.push_back(std::move(value));
  info_.push_back({std::move(name), role});
  return params_.size() - 1;
}

std::size_t Model::add_stats(std::string name, std::int64_t channels) {
  stats_.push_back(nn::BatchNormStats::fresh(channels));
  stats_names_.push_back(std::move(name));
  return stats_.size() - 1;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(seed, 0x5eed);
  const std::int64_t c = config_.channels;
  const Shape feat = config_.feature_shape();

  conv1_ = add_param("backbone.conv1", Role::Downstream, kernel_init({c, config_.in_channels, 3, 3, 3}, rng));
  bn1_gamma_ = add_param("backbone.bn1.gamma", Role::Downstream, Tensor(Shape{c}, 1.0));
  bn1_beta_ = add_param("backbone.bn1.beta", Role::Downstream, Tensor(Shape{c}, 0.0));
  stats1_ = add_stats("backbone.bn1", c);
  conv2_ = add_param("backbone.conv2", Role::Downstream, kernel_init({c, c, 3, 3, 3}, rng));
  bn2_gamma_ = add_param("backbone.bn2.gamma", Role::Downstream, Tensor(Shape{c}, 1.0));
  bn2_beta_ = add_param("backbone.bn2.beta", Role::Downstream, Tensor(Shape{c}, 0.0));
  stats2_ = add_stats("backbone.bn2", c);

  if (config_.dsts_enabled) {
    const double score_std = config_.score_init_std > 0.0
                                 ? config_.score_init_std
                                 : 0.01 / std::sqrt(static_cast<double>(numel(feat)));
    for (int l = 0; l < config_.layers; ++l) {
      LayerSlots layer;
      for (int i = 0; i < config_.neurons; ++i) {
        const std::string prefix = "dsts.l" + std::to_string(l) + ".n" + std::to_string(i) + ".";
        NeuronSlots n{};
        n.score = add_param(prefix + "score", Role::Upstream, gaussian({c, c, 1, 1, 1}, score_std, rng));
        if (config_.sts_enabled) {
          n.spatial = add_param(prefix + "spatial", Role::Downstream, kernel_init({c, c, 1, 3, 3}, rng));
          n.temporal = add_param(prefix + "temporal", Role::Downstream, kernel_init({c, c, 3, 1, 1}, rng));
          if (config_.gates_enabled) n.gates = add_param(prefix + "gates", Role::Upstream, Tensor(Shape{c}, 0.0));
          n.bn_a_gamma = add_param(prefix + "bn_spatial.gamma", Role::Downstream, Tensor(Shape{c}, 1.0));
          n.bn_a_beta = add_param(prefix + "bn_spatial.beta", Role::Downstream, Tensor(Shape{c}, 0.0));
          n.stats_a = add_stats(prefix + "bn_spatial", c);
          n.bn_b_gamma = add_param(prefix + "bn_temporal.gamma", Role::Downstream, Tensor(Shape{c}, 1.0));
          n.bn_b_beta = add_param(prefix + "bn_temporal.beta", Role::Downstream, Tensor(Shape{c}, 0.0));
          n.stats_b = add_stats(prefix + "bn_temporal", c);
        } else {
          n.conv3d = add_param(prefix + "conv3d", Role::Downstream, kernel_init({c, c, 3, 3, 3}, rng));
          n.bn_a_gamma = add_param(prefix + "bn_3d.gamma", Role::Downstream, Tensor(Shape{c}, 1.0));
          n.bn_a_beta = add_param(prefix + "bn_3d.beta", Role::Downstream, Tensor(Shape{c}, 0.0));
          n.stats_a = add_stats(prefix + "bn_3d", c);
        }
        layer.neurons.push_back(n);
      }
      layer.fusion = add_param("dsts.l" + std::to_string(l) + ".fusion", Role::Downstream,
                               kernel_init({c, c, 1, 1, 1}, rng));
      layers_.push_back(std::move(layer));
    }
  }

  head_weight_ = add_param("head.weight", Role::Downstream, kernel_init({config_.classes, c}, rng));
  head_bias_ = add_param("head.bias", Role::Downstream, Tensor(Shape{config_.classes}, 0.0));
  reset_activation_counts();
}

std::optional<std::size_t> Model::find_param(const std::string& name) const {
  for (std::size_t i = 0; i < info_.size(); ++i) {
    if (info_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<Var> Model::parameter_vars(bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& t : params_) vars.push_back(requires_grad ? Var::parameter(t) : Var::constant(t));
  return vars;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

std::int64_t Model::routing_parameter_count() const {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (info_[i].role == Role::Upstream) n += params_[i].size();
  }
  return n;
}

void Model::reset_activation_counts() {
  activation_counts_.assign(static_cast<std::size_t>(config_.dsts_enabled ? config_.layers : 0),
                            std::vector<std::int64_t>(static_cast<std::size_t>(config_.neurons), 0));
}

// ---------------------------------------------------------------------------

Var Model::bn(std::span<const Var> p, const Var& x, std::size_t gamma, std::size_t beta, std::size_t stats,
              nn::Mode mode, bool update_stats) {
  return nn::batch_norm(x, p[gamma], p[beta], stats_[stats], mode, update_stats);
}

ForwardResult Model::forward(std::span<const Var> p, const Tensor& clips, const ForwardOptions& opts) {
  if (p.size() != params_.size()) throw InputError("forward: parameter count mismatch");
  const Shape expected = config_.clip_shape();
  if (clips.rank() != 5 || !std::equal(expected.begin(), expected.end(), clips.shape().begin() + 1)) {
    throw InputError("forward: clips " + to_string(clips.shape()) + " do not match clip shape " +
                     to_string(expected));
  }
  ForwardResult result;
  ForwardOptions local = opts;
  if (local.trace == nullptr) local.trace = &result.trace;

  Var features = backbone_forward(p, Var::constant(clips), local);
  if (config_.dsts_enabled) features = module_forward(p, features, local);
  result.logits = nn::linear(nn::global_avg_pool(features), p[head_weight_], p[head_bias_]);
  if (opts.trace != nullptr) result.trace = *opts.trace;
  return result;
}

Var Model::backbone_forward(std::span<const Var> p, const Var& clips, const ForwardOptions& opts) {
  Var h = conv3d(clips, p[conv1_], kBackbonePad, kBackboneStride);
  h = relu(bn(p, h, bn1_gamma_, bn1_beta_, stats1_, opts.mode, opts.update_stats));
  h = conv3d(h, p[conv2_], kBackbonePad, kBackboneStride);
  return relu(bn(p, h, bn2_gamma_, bn2_beta_, stats2_, opts.mode, opts.update_stats));
}

Var Model::module_forward(std::span<const Var> p, const Var& features, const ForwardOptions& opts) {
  if (!config_.dsts_enabled) throw UnsupportedError("model was built without the DSTS module");
  if (features.rank() != 5 || features.dim(1) != config_.channels) {
    throw InputError("module_forward: features " + to_string(features.shape()) + " need " +
                     std::to_string(config_.channels) + " channels");
  }
  if (opts.trace != nullptr) opts.trace->layers.assign(static_cast<std::size_t>(config_.layers), {});
  if (opts.counter != nullptr && opts.counter->runs.size() != static_cast<std::size_t>(config_.layers)) {
    opts.counter->runs.assign(static_cast<std::size_t>(config_.layers),
                              std::vector<std::int64_t>(static_cast<std::size_t>(config_.neurons), 0));
  }
  Var x = features;
  for (int l = 0; l < config_.layers; ++l) {
    LayerTrace* lt = opts.trace != nullptr ? &opts.trace->layers[static_cast<std::size_t>(l)] : nullptr;
    x = layer_forward(p, l, x, opts, lt);
  }
  return add(x, features);
}

Var Model::impulses(std::span<const Var> p, int layer, const Var& x) const {
  const auto& slots = layers_.at(static_cast<std::size_t>(layer));
  const std::int64_t c = config_.channels, n = config_.neurons;
  if (x.rank() != 5 || x.dim(1) != c) throw InputError("impulses: input channel count mismatch");
  // Stack the N scoring kernels along the output-channel axis.
  Var stacked;
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(c));
    for (std::int64_t r = 0; r < c; ++r) rows[static_cast<std::size_t>(r)] = i * c + r;
    Var placed = scatter_rows(p[slots.neurons[static_cast<std::size_t>(i)].score], std::move(rows), n * c);
    stacked = stacked.defined() ? add(stacked, placed) : placed;
  }
  const std::int64_t b = x.dim(0);
  const Var q = conv3d(x, stacked, kNoPad);
  const std::int64_t per_neuron = q.value().size() / (b * n);
  return reshape(sum_to(reshape(q, Shape{b, n, per_neuron}), Shape{b, n, 1}), Shape{b, n});
}

Var Model::neuron_forward(std::span<const Var> p, int layer, int neuron, const Var& x, const Tensor* gate_noise,
                          nn::Mode mode, bool update_stats, Tensor* mask_out, StraightThroughAnchors* anchors) {
  const auto& s = layers_.at(static_cast<std::size_t>(layer)).neurons.at(static_cast<std::size_t>(neuron));
  const std::int64_t c = config_.channels, b = x.dim(0);
  if (x.rank() != 5 || x.dim(1) != c) throw InputError("neuron_forward: input channel count mismatch");

  if (!config_.sts_enabled) {
    if (mask_out != nullptr) *mask_out = Tensor(Shape{b, c}, 0.0);
    const Var z = conv3d(x, p[*s.conv3d], kFullPad);
    return relu(bn(p, z, s.bn_a_gamma, s.bn_a_beta, s.stats_a, mode, update_stats));
  }

  Var bits;
  if (config_.gates_enabled) {
    const Var g = broadcast_to(reshape(p[*s.gates], Shape{1, c}), Shape{b, c});
    bits = semhash_st(g, gate_noise, mode, anchors);
  } else {
    const auto split = fixed_half_split(c);
    Tensor t(Shape{b, c}, 0.0);
    for (std::int64_t r = 0; r < b; ++r) std::copy(split.begin(), split.end(), t.data().begin() + r * c);
    bits = Var::constant(std::move(t));
  }
  if (mask_out != nullptr) *mask_out = bits.value();

  const auto [xs, xt] = split_channels(x, bits);
  const Var zs = conv3d(xs, p[*s.spatial], kSpatialPad);
  const Var zt = conv3d(xt, p[*s.temporal], kTemporalPad);
  return add(relu(bn(p, zs, s.bn_a_gamma, s.bn_a_beta, s.stats_a, mode, update_stats)),
             relu(bn(p, zt, *s.bn_b_gamma, *s.bn_b_beta, *s.stats_b, mode, update_stats)));
}

Var Model::layer_forward(std::span<const Var> p, int layer, const Var& x, const ForwardOptions& opts,
                         LayerTrace* trace) {
  const auto& slots = layers_.at(static_cast<std::size_t>(layer));
  const std::int64_t b = x.dim(0), n = config_.neurons, c = config_.channels;
  const bool train = opts.mode == nn::Mode::Train;
  const LayerNoise* noise = nullptr;
  if (train) {
    if (opts.noise == nullptr || opts.noise->layers.size() <= static_cast<std::size_t>(layer)) {
      throw InputError("layer_forward: train mode needs a noise sample for every layer");
    }
    noise = &opts.noise->layers[static_cast<std::size_t>(layer)];
    if (noise->gumbel.shape() != Shape{b, n}) throw InputError("layer_forward: noise batch size mismatch");
  }

  // Gate noise rows of one neuron for the given samples.
  auto gate_noise_for = [&](std::int64_t neuron, const std::vector<std::int64_t>& rows) {
    if (noise == nullptr) return Tensor();
    Tensor t(Shape{static_cast<std::int64_t>(rows.size()), c}, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = noise->gates.data().subspan(static_cast<std::size_t>((rows[r] * n + neuron) * c),
                                                   static_cast<std::size_t>(c));
      std::copy(src.begin(), src.end(), t.data().begin() + static_cast<std::int64_t>(r) * c);
    }
    return t;
  };
  auto count = [&](std::int64_t neuron, std::int64_t samples) {
    if (opts.counter != nullptr) {
      opts.counter->runs[static_cast<std::size_t>(layer)][static_cast<std::size_t>(neuron)] += samples;
    }
  };

  std::vector<std::int64_t> all_rows(static_cast<std::size_t>(b));
  for (std::int64_t r = 0; r < b; ++r) all_rows[static_cast<std::size_t>(r)] = r;

  Var z;
  std::vector<int> selected(static_cast<std::size_t>(b), 0);
  Tensor masks(Shape{b, c}, 0.0);
  Var impulse_matrix;

  if (config_.synapse_enabled) {
    impulse_matrix = impulses(p, layer, x);
    const GumbelSelection sel =
        gumbel_softmax_st(impulse_matrix, noise != nullptr ? &noise->gumbel : nullptr, config_.temperature, opts.mode,
                          opts.anchors);
    selected = sel.selected;
    const Var flat_weights = train ? reshape(sel.weights, Shape{b * n, 1}) : Var{};

    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<std::int64_t> rows;
      for (std::int64_t r = 0; r < b; ++r) {
        if (selected[static_cast<std::size_t>(r)] == i) rows.push_back(r);
      }
      if (rows.empty()) continue;
      const bool whole = static_cast<std::int64_t>(rows.size()) == b;
      const Var xi = whole ? x : index_rows(x, rows);
      const Tensor gn = gate_noise_for(i, rows);
      Tensor mask;
      Var zi = neuron_forward(p, layer, static_cast<int>(i), xi, train ? &gn : nullptr, opts.mode, opts.update_stats,
                              &mask, opts.anchors);
      count(i, static_cast<std::int64_t>(rows.size()));
      if (train) {
        std::vector<std::int64_t> picks;
        for (auto r : rows) picks.push_back(r * n + i);
        const Var w = reshape(index_rows(flat_weights, picks), Shape{static_cast<std::int64_t>(rows.size()), 1, 1, 1, 1});
        zi = mul(zi, broadcast_to(w, zi.shape()));
      }
      for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(mask.data().begin() + static_cast<std::int64_t>(r) * c, c, masks.data().begin() + rows[r] * c);
      }
      const Var placed = whole ? zi : scatter_rows(zi, rows, b);
      z = z.defined() ? add(z, placed) : placed;
    }
  } else {
    {
      NoGradGuard no_grad;
      impulse_matrix = impulses(p, layer, x);
    }
    for (std::int64_t r = 0; r < b; ++r) {
      selected[static_cast<std::size_t>(r)] =
          argmax(impulse_matrix.value().data().subspan(static_cast<std::size_t>(r * n), static_cast<std::size_t>(n)));
    }
    for (std::int64_t i = 0; i < n; ++i) {
      const Tensor gn = gate_noise_for(i, all_rows);
      Tensor mask;
      const Var zi =
          neuron_forward(p, layer, static_cast<int>(i), x, train ? &gn : nullptr, opts.mode, opts.update_stats, &mask,
                         opts.anchors);
      count(i, b);
      for (std::int64_t r = 0; r < b; ++r) {
        if (selected[static_cast<std::size_t>(r)] == i) {
          std::copy_n(mask.data().begin() + r * c, c, masks.data().begin() + r * c);
        }
      }
      z = z.defined() ? add(z, zi) : zi;
    }
    z = scale(z, 1.0 / static_cast<double>(n));
  }

  if (opts.record_routing) {
    for (int s : selected) ++activation_counts_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(s)];
  }
  if (trace != nullptr) {
    trace->selected = selected;
    trace->impulses = impulse_matrix.value();
    NoGradGuard no_grad;
    trace->routing_probs = nn::softmax(scale(impulse_matrix.detach(), 1.0 / config_.temperature)).value();
    trace->masks = std::move(masks);
  }
  return conv3d(z, p[slots.fusion], kNoPad);
}

}  // namespace dsts
