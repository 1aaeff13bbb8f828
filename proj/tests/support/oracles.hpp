#pragma once

// Reference implementations used only by tests. They are written directly
// from the defining formulas and share no code with the library kernels.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dsts/tensor.hpp"

namespace oracle {

using dsts::Shape;
using dsts::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.storage()) v = dist(gen);
  return t;
}

/// Direct-summation correlation with zero padding.
inline Tensor conv3d(const Tensor& x, const Tensor& k, std::array<std::int64_t, 3> pad,
                     std::array<std::int64_t, 3> stride = {1, 1, 1}) {
  const auto B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto O = k.dim(0), KT = k.dim(2), KH = k.dim(3), KW = k.dim(4);
  const auto OT = (T + 2 * pad[0] - KT) / stride[0] + 1;
  const auto OH = (H + 2 * pad[1] - KH) / stride[1] + 1;
  const auto OW = (W + 2 * pad[2] - KW) / stride[2] + 1;
  Tensor y(Shape{B, O, OT, OH, OW}, 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t t = 0; t < OT; ++t)
        for (std::int64_t h = 0; h < OH; ++h)
          for (std::int64_t w = 0; w < OW; ++w) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t i = 0; i < KT; ++i)
                for (std::int64_t j = 0; j < KH; ++j)
                  for (std::int64_t l = 0; l < KW; ++l) {
                    const auto tt = t * stride[0] + i - pad[0];
                    const auto hh = h * stride[1] + j - pad[1];
                    const auto ww = w * stride[2] + l - pad[2];
                    if (tt < 0 || tt >= T || hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                    acc += k.at({o, c, i, j, l}) * x.at({b, c, tt, hh, ww});
                  }
            y.at({b, o, t, h, w}) = acc;
          }
  return y;
}

/// (x - mean) / sqrt(var + eps) * gamma + beta per channel of a rank-5 tensor.
inline Tensor bn_eval(const Tensor& x, const std::vector<double>& mean, const std::vector<double>& var,
                      const std::vector<double>& gamma, const std::vector<double>& beta, double eps = 1e-5) {
  Tensor y = x;
  const auto B = x.dim(0), C = x.dim(1);
  const auto vol = x.size() / (B * C);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < vol; ++i) {
        const auto idx = (b * C + c) * vol + i;
        y[idx] = (x[idx] - mean[c]) / std::sqrt(var[c] + eps) * gamma[c] + beta[c];
      }
  return y;
}

/// Batch-statistics normalization (biased variance), per channel.
inline Tensor bn_train(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                       double eps = 1e-5) {
  const auto B = x.dim(0), C = x.dim(1);
  const auto vol = x.size() / (B * C);
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < vol; ++i) s += x[(b * C + c) * vol + i];
    mean[c] = s / static_cast<double>(B * vol);
    double v = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < vol; ++i) {
        const double d = x[(b * C + c) * vol + i] - mean[c];
        v += d * d;
      }
    var[c] = v / static_cast<double>(B * vol);
  }
  return bn_eval(x, mean, var, gamma, beta, eps);
}

inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const auto B = logits.dim(0), K = logits.dim(1);
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(logits.at({b, k}));
    total += std::log(z) - logits.at({b, labels[b]});
  }
  return total / static_cast<double>(B);
}

inline Tensor relu(Tensor x) {
  for (auto& v : x.storage()) v = v > 0 ? v : 0.0;
  return x;
}

/// Central finite-difference gradient of f with respect to every element of
/// params[which].
inline Tensor fd_gradient(const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> params,
                          std::size_t which, double h = 1e-4) {
  Tensor g(params[which].shape(), 0.0);
  for (std::int64_t i = 0; i < g.size(); ++i) {
    const double orig = params[which][i];
    params[which][i] = orig + h;
    const double up = f(params);
    params[which][i] = orig - h;
    const double down = f(params);
    params[which][i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||); 0 when both are exactly zero.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace oracle
