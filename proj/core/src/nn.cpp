#include "dsts/nn.hpp"

#include <algorithm>
#include <cmath>

#include "dsts/error.hpp"

namespace dsts::nn {

using namespace ops;

namespace {

Shape channel_shape(const Shape& x) {
  Shape s(x.size(), 1);
  s[1] = x[1];
  return s;
}

}  // namespace

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, Mode mode,
               bool update_stats) {
  if (x.rank() < 2) throw InputError("batch_norm needs a B x C x ... input, got " + to_string(x.shape()));
  const std::int64_t channels = x.dim(1);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels} ||
      stats.running_mean.shape() != Shape{channels} || stats.running_var.shape() != Shape{channels}) {
    throw InputError("batch_norm state does not match " + std::to_string(channels) + " channels");
  }
  const Shape cshape = channel_shape(x.shape());
  const Var g = broadcast_to(reshape(gamma, cshape), x.shape());
  const Var b = broadcast_to(reshape(beta, cshape), x.shape());

  if (mode == Mode::Eval) {
    Tensor shift(x.shape(), 0.0);
    Tensor inv(x.shape(), 0.0);
    const std::int64_t inner = x.value().size() / (x.dim(0) * channels);
    for (std::int64_t n = 0; n < x.dim(0); ++n) {
      for (std::int64_t c = 0; c < channels; ++c) {
        const double m = stats.running_mean[c];
        const double r = 1.0 / std::sqrt(stats.running_var[c] + kBatchNormEps);
        const std::int64_t base = (n * channels + c) * inner;
        std::fill_n(shift.data().begin() + base, inner, m);
        std::fill_n(inv.data().begin() + base, inner, r);
      }
    }
    Var normalized = mul(sub(x, Var::constant(std::move(shift))), Var::constant(std::move(inv)));
    return add(mul(normalized, g), b);
  }

  const std::int64_t count = x.value().size() / channels;
  if (count < 2) throw InputError("batch_norm train mode needs at least 2 values per channel");
  const Var mean = scale(sum_to(x, cshape), 1.0 / static_cast<double>(count));
  const Var centered = sub(x, broadcast_to(mean, x.shape()));
  const Var var = scale(sum_to(mul(centered, centered), cshape), 1.0 / static_cast<double>(count));
  const Var inv_std = rsqrt(add_scalar(var, kBatchNormEps));
  const Var normalized = mul(centered, broadcast_to(inv_std, x.shape()));

  if (update_stats) {
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::int64_t c = 0; c < channels; ++c) {
      stats.running_mean[c] = (1.0 - kBatchNormMomentum) * stats.running_mean[c] + kBatchNormMomentum * mean.value()[c];
      stats.running_var[c] =
          (1.0 - kBatchNormMomentum) * stats.running_var[c] + kBatchNormMomentum * var.value()[c] * unbias;
    }
  }
  return add(mul(normalized, g), b);
}

Var softmax(const Var& logits) {
  if (logits.rank() != 2) throw InputError("softmax expects a B x K matrix");
  const std::int64_t rows = logits.dim(0), k = logits.dim(1);
  Tensor row_max(Shape{rows, k}, 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = logits.value()[r * k];
    for (std::int64_t j = 1; j < k; ++j) m = std::max(m, logits.value()[r * k + j]);
    std::fill_n(row_max.data().begin() + r * k, k, m);
  }
  const Var e = exp(sub(logits, Var::constant(std::move(row_max))));
  const Var denom = broadcast_to(sum_to(e, Shape{rows, 1}), logits.shape());
  return mul(e, reciprocal(denom));
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw InputError("cross_entropy expects B x K logits");
  const std::int64_t rows = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != rows) throw InputError("cross_entropy: label count != batch size");
  std::vector<std::int64_t> picks(static_cast<std::size_t>(rows));
  Tensor row_max(Shape{rows, k}, 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= k) {
      throw InputError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    picks[static_cast<std::size_t>(r)] = r * k + label;
    double m = logits.value()[r * k];
    for (std::int64_t j = 1; j < k; ++j) m = std::max(m, logits.value()[r * k + j]);
    std::fill_n(row_max.data().begin() + r * k, k, m);
  }
  const Var shifted = sub(logits, Var::constant(std::move(row_max)));
  const Var log_norm = log(sum_to(exp(shifted), Shape{rows, 1}));
  const Var picked = index_rows(reshape(shifted, Shape{rows * k, 1}), picks);
  return scale(sum(sub(log_norm, picked)), 1.0 / static_cast<double>(rows));
}

Var global_avg_pool(const Var& x) {
  if (x.rank() != 5) throw InputError("global_avg_pool expects a rank-5 input");
  const std::int64_t b = x.dim(0), c = x.dim(1);
  const std::int64_t vol = x.value().size() / (b * c);
  const Var flat = reshape(x, Shape{b, c, vol});
  return scale(reshape(sum_to(flat, Shape{b, c, 1}), Shape{b, c}), 1.0 / static_cast<double>(vol));
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Var out = matmul(x, transpose(weight));
  return add(out, broadcast_to(reshape(bias, Shape{1, bias.dim(0)}), out.shape()));
}

}  // namespace dsts::nn
