#pragma once

#include <span>

#include "dsts/autograd.hpp"
#include "dsts/ops.hpp"

namespace dsts::nn {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Running statistics of one batch-norm layer, one entry per channel.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;

  static BatchNormStats fresh(std::int64_t channels) {
    return {Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)};
  }
};

/// Per-channel normalization of a B x C x ... tensor. Train mode uses batch
/// statistics over every non-channel axis and, when `update_stats` is set,
/// folds them into `stats` (unbiased variance, momentum 0.1). Eval mode uses
/// the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, Mode mode,
               bool update_stats);

/// Row-wise softmax of a B x K matrix, max-shifted.
Var softmax(const Var& logits);

/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const int> labels);

/// B x C x T x H x W -> B x C mean over (T, H, W).
Var global_avg_pool(const Var& x);

/// x (B x F) times weight^T (K x F) plus bias (K).
Var linear(const Var& x, const Var& weight, const Var& bias);

}  // namespace dsts::nn
