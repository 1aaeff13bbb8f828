#pragma once

#include <span>
#include <vector>

#include "dsts/autograd.hpp"
#include "dsts/nn.hpp"
#include "dsts/random.hpp"

namespace dsts {

/// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const double> values);

/// Linearization points for the straight-through estimators of one forward
/// pass. While recording, each estimator stores its relaxed value in call
/// order. On replay each estimator evaluates to hard + (soft - recorded),
/// which is exactly `hard` at the recorded point and differentiates like the
/// straight-through gradient, so finite differences of a replayed forward
/// check straight-through gradients.
struct StraightThroughAnchors {
  bool recording = true;
  std::vector<Tensor> values;
  std::size_t cursor = 0;

  void replay() {
    recording = false;
    cursor = 0;
  }
};

/// Straight-through estimator, optionally linearized around `anchors`.
Var straight_through(Tensor hard, const Var& soft, StraightThroughAnchors* anchors);

// ---------------------------------------------------------------------------
// Gumbel-Softmax neuron selection

struct SelectionOutcome {
  std::vector<double> hard;  // one-hot
  std::vector<double> soft;  // sums to 1
  int selected_index = 0;
};

/// Train mode perturbs logits with Gumbel noise before the softmax; eval mode
/// takes the plain argmax and leaves `rng` untouched.
SelectionOutcome gumbel_softmax_select(std::span<const double> logits, double temperature, nn::Mode mode,
                                       Rng& rng);

/// Batched, recorded form. `logits` is B x N; `noise` is a B x N Gumbel
/// sample (ignored in eval mode, may be null there).
struct GumbelSelection {
  Var weights;  // one-hot rows; gradient flows into `soft`
  Var soft;     // softmax((logits + noise) / temperature)
  std::vector<int> selected;
};
GumbelSelection gumbel_softmax_st(const Var& logits, const Tensor* noise, double temperature, nn::Mode mode,
                                  StraightThroughAnchors* anchors = nullptr);

// ---------------------------------------------------------------------------
// Improved-Semhash channel gates

struct BinaryMask {
  std::vector<double> bits;  // each 0 or 1; 1 selects the temporal operator
};

/// clamp(1.2 * sigmoid(x) - 0.1, 0, 1)
Var saturating_sigmoid(const Var& x);

/// Train mode adds N(0,1) noise to the logits, thresholds at 0, and routes
/// gradients through the saturating sigmoid of the noisy logits. Eval mode
/// thresholds the plain logits.
BinaryMask semhash_binarize(std::span<const double> gate_logits, nn::Mode mode, Rng& rng);

/// Batched, recorded form over B x C gate logits with a B x C noise sample.
Var semhash_st(const Var& gate_logits, const Tensor* noise, nn::Mode mode,
               StraightThroughAnchors* anchors = nullptr);

}  // namespace dsts
