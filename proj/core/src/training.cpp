#include "dsts/training.hpp"

#include <cmath>
#include <limits>

#include "dsts/checkpoint.hpp"
#include "dsts/error.hpp"
#include "dsts/nn.hpp"
#include "dsts/ops.hpp"

namespace dsts {

namespace {

void check_finite(double loss, const char* step) {
  if (!std::isfinite(loss)) throw NumericError(std::string("non-finite loss in ") + step);
}

ForwardOptions train_options(const NoiseSample& noise, bool update_stats) {
  ForwardOptions opts;
  opts.mode = nn::Mode::Train;
  opts.noise = &noise;
  opts.update_stats = update_stats;
  return opts;
}

// Gradient descent on the live parameters in `slots` from gradients
// computed with respect to `vars` (same order).
void descend(Model& model, std::span<const std::size_t> slots, const Gradients& g, double lr) {
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (!g.reached[k]) continue;
    Tensor& p = model.params()[slots[k]];
    const Tensor& d = g[k].value();
    for (std::int64_t i = 0; i < p.size(); ++i) p[i] -= lr * d[i];
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 so it can be split into two halves");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (eval_batch_size < 1) throw ConfigError("eval batch size must be positive");
}

ParameterPartition partition_parameters(const Model& model) {
  ParameterPartition part;
  for (std::size_t i = 0; i < model.param_info().size(); ++i) {
    const auto& info = model.param_info()[i];
    const bool routing = info.name.ends_with(".score") || info.name.ends_with(".gates");
    if (routing != (info.role == Role::Upstream)) {
      throw IntegrityError("parameter '" + info.name + "' has a role that contradicts its kind");
    }
    (info.role == Role::Upstream ? part.upstream : part.downstream).push_back(i);
  }
  if (part.upstream.size() + part.downstream.size() != model.params().size()) {
    throw IntegrityError("parameter partition does not cover the model");
  }
  return part;
}

Batch make_batch(std::span<const VideoSample> samples, std::span<const std::size_t> indices) {
  Batch b;
  b.clips = stack_clips(samples, indices);
  b.labels = gather_labels(samples, indices);
  for (auto i : indices) b.ids.push_back(samples[i].id);
  return b;
}

SimulatedUpdate simulated_update(Model& model, const ParameterPartition& part, const Batch& train,
                                 const NoiseSample& noise, double lr) {
  SimulatedUpdate sim;
  std::vector<Var> p = model.parameter_vars(true);
  std::vector<Var> down;
  for (auto i : part.upstream) sim.upstream.push_back(p[i]);
  for (auto i : part.downstream) down.push_back(p[i]);

  const Var loss = nn::cross_entropy(model.forward(p, train.clips, train_options(noise, false)).logits, train.labels);
  sim.loss = loss.value().item();
  check_finite(sim.loss, "the simulated update");
  sim.step = gradient_step(loss, down, lr, true);
  sim.shadow = std::move(p);
  for (std::size_t k = 0; k < part.downstream.size(); ++k) sim.shadow[part.downstream[k]] = sim.step.updated[k];
  return sim;
}

MetaGradient meta_gradient(Model& model, const ParameterPartition& part, const SimulatedUpdate& sim,
                           const Batch& val, const NoiseSample& noise) {
  if (!sim.step.differentiable) throw IntegrityError("meta update needs a differentiable simulated update");
  // The validation forward sees u only as a constant; its gradient comes
  // through d_hat alone.
  std::vector<Var> p = sim.shadow;
  for (auto i : part.upstream) p[i] = p[i].detach();
  const Var loss = nn::cross_entropy(model.forward(p, val.clips, train_options(noise, false)).logits, val.labels);
  MetaGradient meta;
  meta.loss = loss.value().item();
  check_finite(meta.loss, "the meta update");
  const Gradients g = backward_through_backward(loss, sim.step, sim.upstream);
  for (std::size_t k = 0; k < part.upstream.size(); ++k) meta.upstream.push_back(g[k].value());
  return meta;
}

MetaGradient meta_update(Model& model, const ParameterPartition& part, const SimulatedUpdate& sim, const Batch& val,
                         const NoiseSample& noise, double lr) {
  MetaGradient meta = meta_gradient(model, part, sim, val, noise);
  for (std::size_t k = 0; k < part.upstream.size(); ++k) {
    Tensor& u = model.params()[part.upstream[k]];
    for (std::int64_t i = 0; i < u.size(); ++i) u[i] -= lr * meta.upstream[k][i];
  }
  return meta;
}

double actual_update(Model& model, const ParameterPartition& part, const Batch& train, const NoiseSample& noise,
                     double lr) {
  std::vector<Var> p = model.parameter_vars(false);
  std::vector<Var> down;
  for (auto i : part.downstream) {
    p[i] = Var::parameter(model.params()[i]);
    down.push_back(p[i]);
  }
  const Var loss = nn::cross_entropy(model.forward(p, train.clips, train_options(noise, true)).logits, train.labels);
  check_finite(loss.value().item(), "the actual update");
  descend(model, part.downstream, grad(loss, down), lr);
  return loss.value().item();
}

double joint_update(Model& model, const Batch& train, const NoiseSample& noise, double lr) {
  const std::vector<Var> p = model.parameter_vars(true);
  const Var loss = nn::cross_entropy(model.forward(p, train.clips, train_options(noise, true)).logits, train.labels);
  check_finite(loss.value().item(), "the joint update");
  std::vector<std::size_t> all(p.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  descend(model, all, grad(loss, p), lr);
  return loss.value().item();
}

IterationStats udl_iteration(Model& model, const ParameterPartition& part, std::span<const VideoSample> samples,
                             std::span<const std::size_t> batch, const TrainConfig& config, Rng& rng) {
  if (batch.size() < 2) throw ConfigError("a UDL iteration needs at least 2 samples");
  const std::size_t half = batch.size() / 2;
  const Batch train = make_batch(samples, batch.first(half));
  const Batch val = make_batch(samples, batch.subspan(half));
  for (auto a : train.ids) {
    for (auto b : val.ids) {
      if (a == b) throw IntegrityError("D_train and D_val share sample " + std::to_string(a));
    }
  }

  IterationStats stats;
  stats.train_ids = train.ids;
  stats.val_ids = val.ids;
  stats.val_loss = std::numeric_limits<double>::quiet_NaN();
  const NoiseSample train_noise = draw_noise(model.config(), static_cast<std::int64_t>(train.ids.size()), rng);
  if (!config.udl_enabled) {
    stats.train_loss = joint_update(model, train, train_noise, config.lr);
    return stats;
  }
  if (!part.upstream.empty()) {
    const NoiseSample val_noise = draw_noise(model.config(), static_cast<std::int64_t>(val.ids.size()), rng);
    const SimulatedUpdate sim = simulated_update(model, part, train, train_noise, config.lr);
    stats.val_loss = meta_update(model, part, sim, val, val_noise, config.meta_lr()).loss;
  }
  stats.train_loss = actual_update(model, part, train, train_noise, config.lr);
  return stats;
}

// ---------------------------------------------------------------------------

Evaluation evaluate(Model& model, std::span<const VideoSample> samples, int batch_size) {
  Evaluation ev;
  const auto layers = static_cast<std::size_t>(model.config().dsts_enabled ? model.config().layers : 0);
  ev.selected.resize(layers);
  ev.masks.resize(layers);
  ev.routing_entropy.assign(layers, 0.0);
  if (samples.empty()) return ev;

  NoGradGuard no_grad;
  const auto params = model.parameter_vars(false);
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const ForwardResult r = model.forward(params, b.clips, ForwardOptions{});
    loss_sum += nn::cross_entropy(r.logits, b.labels).value().item() * static_cast<double>(idx.size());
    const Tensor& logits = r.logits.value();
    const std::int64_t k = logits.dim(1);
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const int pred = argmax(logits.data().subspan(s * static_cast<std::size_t>(k), static_cast<std::size_t>(k)));
      ev.predictions.push_back(pred);
      correct += pred == b.labels[s] ? 1 : 0;
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const LayerTrace& t = r.trace.layers[l];
      const std::int64_t n = t.routing_probs.dim(1), c = t.masks.dim(1);
      for (std::size_t s = 0; s < idx.size(); ++s) {
        ev.selected[l].push_back(t.selected[s]);
        const auto row = t.masks.data().subspan(s * static_cast<std::size_t>(c), static_cast<std::size_t>(c));
        ev.masks[l].emplace_back(row.begin(), row.end());
        double h = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double q = t.routing_probs[static_cast<std::int64_t>(s) * n + i];
          if (q > 0.0) h -= q * std::log(q);
        }
        ev.routing_entropy[l] += h;
      }
    }
  }
  const auto count = static_cast<double>(samples.size());
  ev.loss = loss_sum / count;
  ev.accuracy = static_cast<double>(correct) / count;
  for (auto& h : ev.routing_entropy) h /= count;
  return ev;
}

std::vector<std::vector<double>> temporal_gate_fractions(const Model& model) {
  const ModelConfig& c = model.config();
  std::vector<std::vector<double>> out;
  if (!c.dsts_enabled) return out;
  const auto fixed = fixed_half_split(c.channels);
  double fixed_fraction = 0.0;
  for (double b : fixed) fixed_fraction += b;
  fixed_fraction /= static_cast<double>(c.channels);

  for (int l = 0; l < c.layers; ++l) {
    std::vector<double> row;
    for (const auto& n : model.layer_slots(l).neurons) {
      if (!c.sts_enabled) {
        row.push_back(0.0);
      } else if (!n.gates) {
        row.push_back(fixed_fraction);
      } else {
        double ones = 0.0;
        for (double g : model.params()[*n.gates].data()) ones += g > 0.0 ? 1.0 : 0.0;
        row.push_back(ones / static_cast<double>(c.channels));
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

EpochMetrics epoch_metrics(Model& model, std::span<const VideoSample> held_out, int batch_size) {
  const Evaluation ev = evaluate(model, held_out, batch_size);
  EpochMetrics m;
  m.val_loss = ev.loss;
  m.eval_accuracy = ev.accuracy;
  m.routing_entropy = ev.routing_entropy;
  for (const auto& layer : ev.selected) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(model.config().neurons), 0);
    for (int s : layer) ++counts[static_cast<std::size_t>(s)];
    m.activations.push_back(std::move(counts));
  }
  m.temporal_fraction = temporal_gate_fractions(model);
  return m;
}

void write_metrics_header(std::ostream& out, const ModelConfig& config) {
  out << "epoch,train_loss,val_loss,eval_accuracy";
  if (config.dsts_enabled) {
    for (int l = 0; l < config.layers; ++l) out << ",entropy_l" << l;
    for (int l = 0; l < config.layers; ++l) {
      for (int i = 0; i < config.neurons; ++i) out << ",count_l" << l << "_n" << i;
    }
    for (int l = 0; l < config.layers; ++l) {
      for (int i = 0; i < config.neurons; ++i) out << ",temporal_l" << l << "_n" << i;
    }
  }
  out << "\n";
}

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << ',' << format_double(m.train_loss) << ',' << format_double(m.val_loss) << ','
      << format_double(m.eval_accuracy);
  for (double h : m.routing_entropy) out << ',' << format_double(h);
  for (const auto& layer : m.activations) {
    for (auto c : layer) out << ',' << c;
  }
  for (const auto& layer : m.temporal_fraction) {
    for (double f : layer) out << ',' << format_double(f);
  }
  out << "\n";
}

TrainResult train(Model& model, const TrainConfig& config, std::span<const VideoSample> train_set,
                  std::span<const VideoSample> held_out, const TrainOptions& options) {
  config.validate();
  const ParameterPartition part = partition_parameters(model);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  if (config.epochs > 0 && train_set.size() < batch) {
    throw ConfigError("training split has " + std::to_string(train_set.size()) + " samples, fewer than one batch");
  }
  Rng rng = Rng::derive(config.seed, 0x7a1e);
  TrainResult result;

  auto record = [&](EpochMetrics m) {
    if (options.on_epoch) options.on_epoch(m);
    result.history.push_back(std::move(m));
  };
  {
    EpochMetrics m = epoch_metrics(model, held_out, config.eval_batch_size);
    m.train_loss = std::numeric_limits<double>::quiet_NaN();
    record(std::move(m));
  }

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (result.history.back().eval_accuracy >= options.stop_at_accuracy) break;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t iterations = 0;
    for (std::size_t start = 0; start + batch <= order.size(); start += batch, ++iterations) {
      try {
        loss_sum += udl_iteration(model, part, train_set, std::span(order).subspan(start, batch), config, rng)
                        .train_loss;
      } catch (const NumericError& e) {
        std::string where = "epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iterations);
        if (!options.dump_path.empty()) {
          save_checkpoint(options.dump_path, model, "aborted=" + where + "\n");
          where += "; model state dumped to " + options.dump_path.string();
        }
        throw NumericError(std::string(e.what()) + " at " + where);
      }
    }
    EpochMetrics m = epoch_metrics(model, held_out, config.eval_batch_size);
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(iterations);
    record(std::move(m));
  }
  return result;
}

}  // namespace dsts
