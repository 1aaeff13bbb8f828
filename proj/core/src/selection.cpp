#include "dsts/selection.hpp"

#include "dsts/error.hpp"
#include "dsts/ops.hpp"

namespace dsts {

using namespace ops;

int argmax(std::span<const double> values) {
  if (values.empty()) throw InputError("argmax of empty range");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

Var straight_through(Tensor hard, const Var& soft, StraightThroughAnchors* anchors) {
  if (anchors == nullptr) return ops::straight_through(std::move(hard), soft);
  if (anchors->recording) {
    anchors->values.push_back(soft.value());
    return ops::straight_through(std::move(hard), soft);
  }
  if (anchors->cursor >= anchors->values.size()) throw IntegrityError("straight-through anchors exhausted");
  const Tensor& anchor = anchors->values[anchors->cursor++];
  if (anchor.shape() != soft.shape()) throw IntegrityError("straight-through anchor shape mismatch");
  return ops::add(ops::sub(soft, Var::constant(anchor)), Var::constant(std::move(hard)));
}

GumbelSelection gumbel_softmax_st(const Var& logits, const Tensor* noise, double temperature, nn::Mode mode,
                                  StraightThroughAnchors* anchors) {
  if (logits.rank() != 2 || logits.dim(1) < 1) throw InputError("gumbel_softmax_st expects B x N logits, N >= 1");
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  const std::int64_t rows = logits.dim(0), n = logits.dim(1);

  Var perturbed = logits;
  if (mode == nn::Mode::Train) {
    if (noise == nullptr || noise->shape() != logits.shape()) {
      throw InputError("gumbel_softmax_st: train mode needs a noise sample shaped like the logits");
    }
    perturbed = add(logits, Var::constant(*noise));
  }
  GumbelSelection out;
  out.soft = nn::softmax(scale(perturbed, 1.0 / temperature));

  Tensor hard(logits.shape(), 0.0);
  out.selected.resize(static_cast<std::size_t>(rows));
  const auto& score = perturbed.value();
  for (std::int64_t r = 0; r < rows; ++r) {
    const int a = argmax(score.data().subspan(static_cast<std::size_t>(r * n), static_cast<std::size_t>(n)));
    out.selected[static_cast<std::size_t>(r)] = a;
    hard[r * n + a] = 1.0;
  }
  out.weights =
      mode == nn::Mode::Train ? straight_through(std::move(hard), out.soft, anchors) : Var::constant(std::move(hard));
  return out;
}

SelectionOutcome gumbel_softmax_select(std::span<const double> logits, double temperature, nn::Mode mode,
                                       Rng& rng) {
  if (logits.empty()) throw InputError("gumbel_softmax_select needs at least one logit");
  const auto n = static_cast<std::int64_t>(logits.size());
  NoGradGuard no_grad;
  Var v = Var::constant(Tensor(Shape{1, n}, std::vector<double>(logits.begin(), logits.end())));
  Tensor noise;
  if (mode == nn::Mode::Train) noise = Tensor(Shape{1, n}, sample_gumbel(n, rng));
  GumbelSelection sel = gumbel_softmax_st(v, mode == nn::Mode::Train ? &noise : nullptr, temperature, mode);
  return {sel.weights.value().storage(), sel.soft.value().storage(), sel.selected[0]};
}

Var saturating_sigmoid(const Var& x) { return clamp(add_scalar(scale(sigmoid(x), 1.2), -0.1), 0.0, 1.0); }

Var semhash_st(const Var& gate_logits, const Tensor* noise, nn::Mode mode, StraightThroughAnchors* anchors) {
  if (mode == nn::Mode::Eval) {
    Tensor bits(gate_logits.shape(), 0.0);
    for (std::int64_t i = 0; i < bits.size(); ++i) bits[i] = gate_logits.value()[i] > 0.0 ? 1.0 : 0.0;
    return Var::constant(std::move(bits));
  }
  if (noise == nullptr || noise->shape() != gate_logits.shape()) {
    throw InputError("semhash_st: train mode needs a noise sample shaped like the gate logits");
  }
  const Var noisy = add(gate_logits, Var::constant(*noise));
  Tensor bits(gate_logits.shape(), 0.0);
  for (std::int64_t i = 0; i < bits.size(); ++i) bits[i] = noisy.value()[i] > 0.0 ? 1.0 : 0.0;
  return straight_through(std::move(bits), saturating_sigmoid(noisy), anchors);
}

BinaryMask semhash_binarize(std::span<const double> gate_logits, nn::Mode mode, Rng& rng) {
  const auto n = static_cast<std::int64_t>(gate_logits.size());
  if (n == 0) return {};
  NoGradGuard no_grad;
  Var g = Var::constant(Tensor(Shape{n}, std::vector<double>(gate_logits.begin(), gate_logits.end())));
  Tensor noise;
  if (mode == nn::Mode::Train) {
    noise = Tensor(Shape{n}, 0.0);
    for (auto& e : noise.storage()) e = rng.normal();
  }
  Var b = semhash_st(g, mode == nn::Mode::Train ? &noise : nullptr, mode);
  return {b.value().storage()};
}

}  // namespace dsts
