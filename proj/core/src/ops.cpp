#include "dsts/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dsts/error.hpp"

namespace dsts::ops {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape(), 0.0);
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape(), 0.0);
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

Shape ones_shape(std::size_t rank) { return Shape(rank, 1); }

// Offsets into a same-rank source that is broadcast along its size-1 dims.
// Calls visit(out_index, src_offset) in row-major output order.
template <typename F>
void for_each_broadcast(const Shape& src, const Shape& dst, F visit) {
  const std::size_t rank = dst.size();
  if (src.size() != rank) throw InputError("broadcast rank mismatch " + to_string(src) + " vs " + to_string(dst));
  std::vector<std::int64_t> src_stride(rank, 0);
  std::int64_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (src[d] != dst[d] && src[d] != 1) {
      throw InputError("cannot broadcast " + to_string(src) + " to " + to_string(dst));
    }
    src_stride[d] = src[d] == 1 ? 0 : s;
    s *= src[d];
  }
  const std::int64_t total = numel(dst);
  if (rank == 0) {
    visit(0, 0);
    return;
  }
  std::vector<std::int64_t> idx(rank, 0);
  const std::int64_t inner = dst[rank - 1];
  const std::int64_t inner_stride = src_stride[rank - 1];
  std::int64_t base = 0;
  for (std::int64_t out = 0; out < total; out += inner) {
    for (std::int64_t i = 0; i < inner; ++i) visit(out + i, base + i * inner_stride);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      base += src_stride[d];
      if (idx[d] < dst[d]) break;
      base -= src_stride[d] * dst[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return Var::make(zip(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                   [](const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return Var::make(zip(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                   [](const Var& g) { return std::vector<Var>{g, neg(g)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return Var::make(zip(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                   [a, b](const Var& g) {
                     return std::vector<Var>{a.requires_grad() ? mul(g, b) : Var{},
                                             b.requires_grad() ? mul(g, a) : Var{}};
                   },
                   "mul");
}

Var neg(const Var& a) {
  return Var::make(map(a.value(), [](double x) { return -x; }), {a},
                   [](const Var& g) { return std::vector<Var>{neg(g)}; }, "neg");
}

Var scale(const Var& a, double c) {
  return Var::make(map(a.value(), [c](double x) { return c * x; }), {a},
                   [c](const Var& g) { return std::vector<Var>{scale(g, c)}; }, "scale");
}

Var add_scalar(const Var& a, double c) {
  return Var::make(map(a.value(), [c](double x) { return x + c; }), {a},
                   [](const Var& g) { return std::vector<Var>{g}; }, "add_scalar");
}

Var exp(const Var& a) {
  return Var::make(map(a.value(), [](double x) { return std::exp(x); }), {a},
                   [a](const Var& g) { return std::vector<Var>{mul(g, exp(a))}; }, "exp");
}

Var log(const Var& a) {
  return Var::make(map(a.value(), [](double x) { return std::log(x); }), {a},
                   [a](const Var& g) { return std::vector<Var>{mul(g, reciprocal(a))}; }, "log");
}

Var sigmoid(const Var& a) {
  auto f = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return Var::make(map(a.value(), f), {a},
                   [a](const Var& g) {
                     Var s = sigmoid(a);
                     return std::vector<Var>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
                   },
                   "sigmoid");
}

Var reciprocal(const Var& a) {
  return Var::make(map(a.value(), [](double x) { return 1.0 / x; }), {a},
                   [a](const Var& g) {
                     Var r = reciprocal(a);
                     return std::vector<Var>{neg(mul(g, mul(r, r)))};
                   },
                   "reciprocal");
}

Var rsqrt(const Var& a) {
  return Var::make(map(a.value(), [](double x) { return 1.0 / std::sqrt(x); }), {a},
                   [a](const Var& g) {
                     Var r = rsqrt(a);
                     return std::vector<Var>{scale(mul(g, mul(r, mul(r, r))), -0.5)};
                   },
                   "rsqrt");
}

Var relu(const Var& a) {
  return Var::make(map(a.value(), [](double x) { return x > 0 ? x : 0.0; }), {a},
                   [a](const Var& g) {
                     Var mask = Var::constant(map(a.value(), [](double x) { return x > 0 ? 1.0 : 0.0; }));
                     return std::vector<Var>{mul(g, mask)};
                   },
                   "relu");
}

Var clamp(const Var& a, double lo, double hi) {
  return Var::make(map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }), {a},
                   [a, lo, hi](const Var& g) {
                     Var mask = Var::constant(
                         map(a.value(), [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; }));
                     return std::vector<Var>{mul(g, mask)};
                   },
                   "clamp");
}

Var reshape(const Var& a, Shape shape) {
  Shape original = a.shape();
  return Var::make(a.value().reshaped(std::move(shape)), {a},
                   [original](const Var& g) { return std::vector<Var>{reshape(g, original)}; }, "reshape");
}

Var broadcast_to(const Var& a, Shape shape) {
  if (a.shape() == shape) return a;
  Tensor out(shape, 0.0);
  const auto& src = a.value();
  for_each_broadcast(a.shape(), shape, [&](std::int64_t o, std::int64_t s) { out[o] = src[s]; });
  Shape original = a.shape();
  return Var::make(std::move(out), {a}, [original](const Var& g) { return std::vector<Var>{sum_to(g, original)}; },
                   "broadcast_to");
}

Var sum_to(const Var& a, Shape shape) {
  if (a.shape() == shape) return a;
  Tensor out(shape, 0.0);
  const auto& src = a.value();
  for_each_broadcast(shape, a.shape(), [&](std::int64_t i, std::int64_t o) { out[o] += src[i]; });
  Shape original = a.shape();
  return Var::make(std::move(out), {a},
                   [original](const Var& g) { return std::vector<Var>{broadcast_to(g, original)}; }, "sum_to");
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Shape original = a.shape();
  return Var::make(Tensor::scalar(total), {a},
                   [original](const Var& g) {
                     return std::vector<Var>{broadcast_to(reshape(g, ones_shape(original.size())), original)};
                   },
                   "sum");
}

Var matmul(const Var& a, const Var& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw InputError("matmul shape mismatch " + to_string(a.shape()) + " @ " + to_string(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n}, 0.0);
  const auto& x = a.value();
  const auto& y = b.value();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
    }
  }
  return Var::make(std::move(out), {a, b},
                   [a, b](const Var& g) {
                     return std::vector<Var>{a.requires_grad() ? matmul(g, transpose(b)) : Var{},
                                             b.requires_grad() ? matmul(transpose(a), g) : Var{}};
                   },
                   "matmul");
}

Var transpose(const Var& a) {
  if (a.rank() != 2) throw InputError("transpose needs a matrix, got " + to_string(a.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m}, 0.0);
  const auto& x = a.value();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return Var::make(std::move(out), {a}, [](const Var& g) { return std::vector<Var>{transpose(g)}; }, "transpose");
}

// ---------------------------------------------------------------------------
// 3-D convolution

namespace {

struct ConvGeometry {
  std::int64_t batch, in_ch, out_ch;
  std::array<std::int64_t, 3> in, k, out;
  Triple pad, stride;
};

ConvGeometry make_geometry(const Shape& input, const Shape& kernel, Triple pad, Triple stride) {
  if (input.size() != 5 || kernel.size() != 5) {
    throw InputError("conv3d expects rank-5 input and kernel, got " + to_string(input) + " and " + to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw InputError("conv3d channel mismatch: input " + to_string(input) + ", kernel " + to_string(kernel));
  }
  ConvGeometry g{};
  g.batch = input[0];
  g.in_ch = input[1];
  g.out_ch = kernel[0];
  g.pad = pad;
  g.stride = stride;
  for (int d = 0; d < 3; ++d) {
    g.in[d] = input[2 + d];
    g.k[d] = kernel[2 + d];
    if (stride[d] < 1 || pad[d] < 0) throw ConfigError("conv3d stride must be >= 1 and padding >= 0");
    const std::int64_t span = g.in[d] + 2 * pad[d] - g.k[d];
    if (span < 0) {
      throw ConfigError("conv3d produces non-positive output dims for input " + to_string(input) + " and kernel " +
                        to_string(kernel));
    }
    g.out[d] = span / stride[d] + 1;
  }
  return g;
}

struct Range {
  std::int64_t lo, hi;
};

// Output positions o with 0 <= o*stride + k - pad < in.
Range valid_range(std::int64_t k, std::int64_t pad, std::int64_t stride, std::int64_t in, std::int64_t out) {
  const std::int64_t shift = k - pad;
  std::int64_t lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  const std::int64_t last = in - 1 - shift;
  std::int64_t hi = last < 0 ? 0 : last / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

enum class ConvPass { Forward, InputGrad, KernelGrad };

// One loop nest serves all three passes; `x` is the B x Cin volume, `y` the
// B x Cout volume, `w` the kernel. Forward: y += w*x. InputGrad: x += w*y.
// KernelGrad: w += x*y.
template <ConvPass P>
void conv_loops(const ConvGeometry& g, double* x, double* w, double* y) {
  const auto [IT, IH, IW] = g.in;
  const auto [KT, KH, KW] = g.k;
  const auto [OT, OH, OW] = g.out;
  const auto [st, sh, sw] = g.stride;
  const auto [pt, ph, pw] = g.pad;
  std::vector<Range> rt(KT), rh(KH), rw(KW);
  for (std::int64_t i = 0; i < KT; ++i) rt[i] = valid_range(i, pt, st, IT, OT);
  for (std::int64_t i = 0; i < KH; ++i) rh[i] = valid_range(i, ph, sh, IH, OH);
  for (std::int64_t i = 0; i < KW; ++i) rw[i] = valid_range(i, pw, sw, IW, OW);
  const std::int64_t in_vol = IT * IH * IW, out_vol = OT * OH * OW, k_vol = KT * KH * KW;

  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_ch; ++o) {
      double* yv = y + (b * g.out_ch + o) * out_vol;
      for (std::int64_t c = 0; c < g.in_ch; ++c) {
        double* xv = x + (b * g.in_ch + c) * in_vol;
        double* wk = w + (o * g.in_ch + c) * k_vol;
        for (std::int64_t kt = 0; kt < KT; ++kt) {
          for (std::int64_t kh = 0; kh < KH; ++kh) {
            for (std::int64_t kw = 0; kw < KW; ++kw) {
              double& wval = wk[(kt * KH + kh) * KW + kw];
              double acc = 0.0;
              const Range r_w = rw[kw];
              for (std::int64_t ot = rt[kt].lo; ot < rt[kt].hi; ++ot) {
                const std::int64_t it = ot * st + kt - pt;
                for (std::int64_t oh = rh[kh].lo; oh < rh[kh].hi; ++oh) {
                  const std::int64_t ih = oh * sh + kh - ph;
                  double* yrow = yv + (ot * OH + oh) * OW;
                  double* xrow = xv + (it * IH + ih) * IW + kw - pw;
                  if (sw == 1) {
                    if constexpr (P == ConvPass::Forward) {
                      for (std::int64_t ow = r_w.lo; ow < r_w.hi; ++ow) yrow[ow] += wval * xrow[ow];
                    } else if constexpr (P == ConvPass::InputGrad) {
                      for (std::int64_t ow = r_w.lo; ow < r_w.hi; ++ow) xrow[ow] += wval * yrow[ow];
                    } else {
                      for (std::int64_t ow = r_w.lo; ow < r_w.hi; ++ow) acc += xrow[ow] * yrow[ow];
                    }
                  } else {
                    for (std::int64_t ow = r_w.lo; ow < r_w.hi; ++ow) {
                      const std::int64_t iw = ow * sw;
                      if constexpr (P == ConvPass::Forward) {
                        yrow[ow] += wval * xrow[iw];
                      } else if constexpr (P == ConvPass::InputGrad) {
                        xrow[iw] += wval * yrow[ow];
                      } else {
                        acc += xrow[iw] * yrow[ow];
                      }
                    }
                  }
                }
              }
              if constexpr (P == ConvPass::KernelGrad) wval += acc;
            }
          }
        }
      }
    }
  }
}

// Stride-1 passes on zero-padded volumes. With the output laid out on the
// padded grid, every kernel tap is a single contiguous loop over the whole
// volume; positions that fall outside the real output are cropped (forward)
// or zero (backward).
struct PaddedGrid {
  std::int64_t t, h, w;
  std::int64_t vol() const { return t * h * w; }
};

PaddedGrid padded_grid(const ConvGeometry& g) {
  return {g.in[0] + 2 * g.pad[0], g.in[1] + 2 * g.pad[1], g.in[2] + 2 * g.pad[2]};
}

// Copies B x C volumes of shape `from` into (or out of) the padded grid.
void pad_volumes(const ConvGeometry& g, std::int64_t channels, const double* src, double* dst, bool into) {
  const PaddedGrid p = padded_grid(g);
  const auto [IT, IH, IW] = g.in;
  for (std::int64_t v = 0; v < g.batch * channels; ++v) {
    for (std::int64_t t = 0; t < IT; ++t) {
      for (std::int64_t h = 0; h < IH; ++h) {
        const double* s = src + ((v * (into ? IT : p.t) + t + (into ? 0 : g.pad[0])) * (into ? IH : p.h) + h +
                                 (into ? 0 : g.pad[1])) * (into ? IW : p.w) + (into ? 0 : g.pad[2]);
        double* d = dst + ((v * (into ? p.t : IT) + t + (into ? g.pad[0] : 0)) * (into ? p.h : IH) + h +
                           (into ? g.pad[1] : 0)) * (into ? p.w : IW) + (into ? g.pad[2] : 0);
        std::copy_n(s, IW, d);
      }
    }
  }
}

// Moves the B x Cout outputs between the dense layout and the padded grid.
void place_outputs(const ConvGeometry& g, const double* src, double* dst, bool into_grid) {
  const PaddedGrid p = padded_grid(g);
  const auto [OT, OH, OW] = g.out;
  for (std::int64_t v = 0; v < g.batch * g.out_ch; ++v) {
    for (std::int64_t t = 0; t < OT; ++t) {
      for (std::int64_t h = 0; h < OH; ++h) {
        const std::int64_t dense = ((v * OT + t) * OH + h) * OW;
        const std::int64_t grid = (v * p.t + t) * p.h * p.w + h * p.w;
        if (into_grid) {
          std::copy_n(src + dense, OW, dst + grid);
        } else {
          std::copy_n(src + grid, OW, dst + dense);
        }
      }
    }
  }
}

template <ConvPass P>
void conv_flat(const ConvGeometry& g, double* xp, double* w, double* yp) {
  const PaddedGrid p = padded_grid(g);
  const auto [KT, KH, KW] = g.k;
  const auto [OT, OH, OW] = g.out;
  const std::int64_t vol = p.vol(), k_vol = KT * KH * KW;
  const std::int64_t len = (OT - 1) * p.h * p.w + (OH - 1) * p.w + OW;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_ch; ++o) {
      double* __restrict yv = yp + (b * g.out_ch + o) * vol;
      for (std::int64_t c = 0; c < g.in_ch; ++c) {
        double* __restrict xv = xp + (b * g.in_ch + c) * vol;
        double* wk = w + (o * g.in_ch + c) * k_vol;
        for (std::int64_t kt = 0; kt < KT; ++kt) {
          for (std::int64_t kh = 0; kh < KH; ++kh) {
            for (std::int64_t kw = 0; kw < KW; ++kw) {
              double& wval = wk[(kt * KH + kh) * KW + kw];
              const double* __restrict xs = xv + (kt * p.h + kh) * p.w + kw;
              if constexpr (P == ConvPass::Forward) {
                const double a = wval;
                for (std::int64_t j = 0; j < len; ++j) yv[j] += a * xs[j];
              } else if constexpr (P == ConvPass::InputGrad) {
                const double a = wval;
                double* __restrict xd = xv + (kt * p.h + kh) * p.w + kw;
                for (std::int64_t j = 0; j < len; ++j) xd[j] += a * yv[j];
              } else {
                double acc[4] = {0.0, 0.0, 0.0, 0.0};
                std::int64_t j = 0;
                for (; j + 4 <= len; j += 4) {
                  acc[0] += xs[j] * yv[j];
                  acc[1] += xs[j + 1] * yv[j + 1];
                  acc[2] += xs[j + 2] * yv[j + 2];
                  acc[3] += xs[j + 3] * yv[j + 3];
                }
                for (; j < len; ++j) acc[0] += xs[j] * yv[j];
                wval += (acc[0] + acc[1]) + (acc[2] + acc[3]);
              }
            }
          }
        }
      }
    }
  }
}

bool unit_stride(const ConvGeometry& g) { return g.stride == Triple{1, 1, 1}; }

// Dispatches one pass; the padded path needs scratch volumes of B x C x grid.
template <ConvPass P>
void run_conv(const ConvGeometry& g, double* x, double* w, double* y) {
  if (!unit_stride(g)) {
    conv_loops<P>(g, x, w, y);
    return;
  }
  const PaddedGrid p = padded_grid(g);
  std::vector<double> xp(static_cast<std::size_t>(g.batch * g.in_ch * p.vol()), 0.0);
  std::vector<double> yp(static_cast<std::size_t>(g.batch * g.out_ch * p.vol()), 0.0);
  if constexpr (P != ConvPass::InputGrad) pad_volumes(g, g.in_ch, x, xp.data(), true);
  if constexpr (P != ConvPass::Forward) place_outputs(g, y, yp.data(), true);
  conv_flat<P>(g, xp.data(), w, yp.data());
  if constexpr (P == ConvPass::Forward) place_outputs(g, yp.data(), y, false);
  if constexpr (P == ConvPass::InputGrad) pad_volumes(g, g.in_ch, xp.data(), x, false);
}

// conv_loops only writes through the pointer that is the pass's output.
double* mutable_data(const Var& v) { return const_cast<double*>(v.value().data().data()); }

Shape output_shape(const ConvGeometry& g) { return {g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]}; }

}  // namespace

Var conv3d(const Var& input, const Var& kernel, Triple padding, Triple stride) {
  const ConvGeometry g = make_geometry(input.shape(), kernel.shape(), padding, stride);
  Tensor out(output_shape(g), 0.0);
  run_conv<ConvPass::Forward>(g, mutable_data(input), mutable_data(kernel), out.data().data());
  return Var::make(std::move(out), {input, kernel},
                   [input, kernel, padding, stride](const Var& gy) {
                     return std::vector<Var>{
                         input.requires_grad()
                             ? conv3d_input_grad(gy, kernel, input.shape(), padding, stride)
                             : Var{},
                         kernel.requires_grad()
                             ? conv3d_kernel_grad(input, gy, kernel.shape(), padding, stride)
                             : Var{}};
                   },
                   "conv3d");
}

Var conv3d_input_grad(const Var& grad_output, const Var& kernel, const Shape& input_shape, Triple padding,
                      Triple stride) {
  const ConvGeometry g = make_geometry(input_shape, kernel.shape(), padding, stride);
  if (grad_output.shape() != output_shape(g)) {
    throw InputError("conv3d_input_grad: gradient shape " + to_string(grad_output.shape()) + " does not match " +
                     to_string(output_shape(g)));
  }
  Tensor gx(input_shape, 0.0);
  run_conv<ConvPass::InputGrad>(g, gx.data().data(), mutable_data(kernel), mutable_data(grad_output));
  return Var::make(std::move(gx), {grad_output, kernel},
                   [grad_output, kernel, padding, stride](const Var& gg) {
                     return std::vector<Var>{
                         grad_output.requires_grad() ? conv3d(gg, kernel, padding, stride) : Var{},
                         kernel.requires_grad()
                             ? conv3d_kernel_grad(gg, grad_output, kernel.shape(), padding, stride)
                             : Var{}};
                   },
                   "conv3d_input_grad");
}

Var conv3d_kernel_grad(const Var& input, const Var& grad_output, const Shape& kernel_shape, Triple padding,
                       Triple stride) {
  const ConvGeometry g = make_geometry(input.shape(), kernel_shape, padding, stride);
  if (grad_output.shape() != output_shape(g)) {
    throw InputError("conv3d_kernel_grad: gradient shape " + to_string(grad_output.shape()) + " does not match " +
                     to_string(output_shape(g)));
  }
  Tensor gw(kernel_shape, 0.0);
  run_conv<ConvPass::KernelGrad>(g, mutable_data(input), gw.data().data(), mutable_data(grad_output));
  return Var::make(std::move(gw), {input, grad_output},
                   [input, grad_output, padding, stride](const Var& gg) {
                     return std::vector<Var>{
                         input.requires_grad() ? conv3d_input_grad(grad_output, gg, input.shape(), padding, stride)
                                               : Var{},
                         grad_output.requires_grad() ? conv3d(input, gg, padding, stride) : Var{}};
                   },
                   "conv3d_kernel_grad");
}

// ---------------------------------------------------------------------------

Var index_rows(const Var& a, std::vector<std::int64_t> index) {
  if (a.rank() < 1) throw InputError("index_rows needs rank >= 1");
  const std::int64_t rows = a.dim(0);
  const std::int64_t row = a.value().size() / rows;
  Shape shape = a.shape();
  shape[0] = static_cast<std::int64_t>(index.size());
  if (index.empty()) throw InputError("index_rows with empty index");
  Tensor out(shape, 0.0);
  const auto& src = a.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw InputError("index_rows index out of range");
    std::copy_n(src.data().begin() + index[i] * row, row, out.data().begin() + static_cast<std::int64_t>(i) * row);
  }
  return Var::make(std::move(out), {a},
                   [index, rows](const Var& g) { return std::vector<Var>{scatter_rows(g, index, rows)}; },
                   "index_rows");
}

Var scatter_rows(const Var& a, std::vector<std::int64_t> index, std::int64_t rows) {
  if (a.rank() < 1 || a.dim(0) != static_cast<std::int64_t>(index.size())) {
    throw InputError("scatter_rows: index length does not match leading dim");
  }
  const std::int64_t row = a.value().size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = rows;
  Tensor out(shape, 0.0);
  const auto& src = a.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw InputError("scatter_rows index out of range");
    const double* s = src.data().data() + static_cast<std::int64_t>(i) * row;
    double* d = out.data().data() + index[i] * row;
    for (std::int64_t j = 0; j < row; ++j) d[j] += s[j];
  }
  return Var::make(std::move(out), {a}, [index](const Var& g) { return std::vector<Var>{index_rows(g, index)}; },
                   "scatter_rows");
}

Var straight_through(Tensor hard, const Var& soft) {
  if (hard.shape() != soft.shape()) throw InputError("straight_through shape mismatch");
  return Var::make(std::move(hard), {soft}, [](const Var& g) { return std::vector<Var>{g}; }, "straight_through");
}

}  // namespace dsts::ops
