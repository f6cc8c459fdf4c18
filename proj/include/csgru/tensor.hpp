#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csgru/errors.hpp"

namespace csgru {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor of doubles. Values are immutable once constructed;
// copies share the payload, so passing tensors around is cheap and thread-safe.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))) {
    if (static_cast<std::int64_t>(data_->size()) != numel(shape_))
      throw shape_error("tensor data length " + std::to_string(data_->size()) +
                        " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)), 0.0);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, double v) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)), v);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  std::span<const double> data() const {
    return data_ ? std::span<const double>(*data_) : std::span<const double>();
  }

  // c-y-x access for [C,H,W] tensors.
  double at(int c, int y, int x) const {
    return (*data_)[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  // Same payload under a new shape (row-major reinterpretation).
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw shape_error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

// ---- pointwise operations ------------------------------------------------

namespace detail {
template <typename F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(a.shape(), std::move(out));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  check_same_shape(a, b, op);
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
  return Tensor(a.shape(), std::move(out));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor scale(const Tensor& a, double c) {
  return detail::map(a, [c](double x) { return c * x; });
}
inline Tensor one_minus(const Tensor& a) {
  return detail::map(a, [](double x) { return 1.0 - x; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Inverse of the sigmoid.
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline Tensor sigmoid(const Tensor& a) { return detail::map(a, sigmoid_scalar); }
inline Tensor tanh(const Tensor& a) {
  return detail::map(a, [](double x) { return std::tanh(x); });
}

// Heaviside step with the fire-at-threshold convention H(u) = 1 iff u >= 0.
inline Tensor heaviside(const Tensor& a) {
  return detail::map(a, [](double x) { return x >= 0.0 ? 1.0 : 0.0; });
}

// ---- linear operations ---------------------------------------------------

// weight [out,in] . input [in] + bias [out]; bias may be undefined.
inline Tensor affine(const Tensor& weight, const Tensor& input, const Tensor& bias) {
  if (weight.shape().size() != 2)
    throw shape_error("affine: weight must be 2-d, got " + shape_str(weight.shape()));
  const int out_n = weight.shape()[0];
  const int in_n = weight.shape()[1];
  if (input.size() != in_n)
    throw shape_error("affine: weight " + shape_str(weight.shape()) +
                      " incompatible with input " + shape_str(input.shape()));
  if (bias.defined() && bias.size() != out_n)
    throw shape_error("affine: bias " + shape_str(bias.shape()) +
                      " incompatible with weight " + shape_str(weight.shape()));
  std::vector<double> out(static_cast<std::size_t>(out_n));
  auto w = weight.data();
  auto x = input.data();
  for (int o = 0; o < out_n; ++o) {
    double acc = 0.0;
    const double* row = w.data() + static_cast<std::size_t>(o) * in_n;
    for (int i = 0; i < in_n; ++i) acc += row[i] * x[i];
    out[static_cast<std::size_t>(o)] = bias.defined() ? acc + bias[o] : acc;
  }
  return Tensor({out_n}, std::move(out));
}

// Geometry of a 2-d cross-correlation. Zero padding of kh/2, kw/2 keeps the
// spatial extent fixed at stride 1 (required for recurrent state shapes);
// strides > 1 are only used by the data-pipeline downsampling conv.
struct ConvGeom {
  int kh = 3, kw = 3;
  int sy = 1, sx = 1;
};

inline void check_conv_args(const Tensor& input, const Tensor& kernel, const ConvGeom& g) {
  if (input.shape().size() != 3)
    throw shape_error("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
  if (kernel.shape().size() != 4)
    throw shape_error("conv2d: kernel must be [Co,Ci,kh,kw], got " + shape_str(kernel.shape()));
  if (g.kh % 2 == 0 || g.kw % 2 == 0)
    throw config_error("conv2d: kernel size " + std::to_string(g.kh) + "x" +
                       std::to_string(g.kw) + " must be odd");
  if (kernel.shape()[2] != g.kh || kernel.shape()[3] != g.kw)
    throw shape_error("conv2d: kernel " + shape_str(kernel.shape()) +
                      " does not match geometry " + std::to_string(g.kh) + "x" +
                      std::to_string(g.kw));
  if (kernel.shape()[1] != input.shape()[0])
    throw shape_error("conv2d: kernel " + shape_str(kernel.shape()) +
                      " channel count does not match input " + shape_str(input.shape()));
}

inline Shape conv2d_out_shape(const Shape& in, const Tensor& kernel, const ConvGeom& g) {
  const int ph = g.kh / 2, pw = g.kw / 2;
  const int ho = (in[1] + 2 * ph - g.kh) / g.sy + 1;
  const int wo = (in[2] + 2 * pw - g.kw) / g.sx + 1;
  return {kernel.shape()[0], ho, wo};
}

// Zero-padded cross-correlation: input [Ci,H,W], kernel [Co,Ci,kh,kw],
// bias [Co] (optional). Stride 1 preserves H and W exactly.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     const ConvGeom& g = {}) {
  check_conv_args(input, kernel, g);
  const int ci_n = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int co_n = kernel.shape()[0];
  if (bias.defined() && bias.size() != co_n)
    throw shape_error("conv2d: bias " + shape_str(bias.shape()) +
                      " incompatible with kernel " + shape_str(kernel.shape()));
  const int ph = g.kh / 2, pw = g.kw / 2;
  const Shape os = conv2d_out_shape(input.shape(), kernel, g);
  const int ho = os[1], wo = os[2];
  std::vector<double> out(static_cast<std::size_t>(numel(os)));
  auto xd = input.data();
  auto kd = kernel.data();
  for (int co = 0; co < co_n; ++co) {
    for (int yo = 0; yo < ho; ++yo) {
      for (int xo = 0; xo < wo; ++xo) {
        double acc = 0.0;
        for (int ci = 0; ci < ci_n; ++ci) {
          const double* kbase =
              kd.data() + ((static_cast<std::size_t>(co) * ci_n + ci) * g.kh) * g.kw;
          const double* xbase = xd.data() + static_cast<std::size_t>(ci) * h * w;
          for (int ky = 0; ky < g.kh; ++ky) {
            const int yi = yo * g.sy - ph + ky;
            if (yi < 0 || yi >= h) continue;
            for (int kx = 0; kx < g.kw; ++kx) {
              const int xi = xo * g.sx - pw + kx;
              if (xi < 0 || xi >= w) continue;
              acc += kbase[ky * g.kw + kx] * xbase[yi * w + xi];
            }
          }
        }
        if (bias.defined()) acc += bias[co];
        out[(static_cast<std::size_t>(co) * ho + yo) * wo + xo] = acc;
      }
    }
  }
  return Tensor(os, std::move(out));
}

// 2x2/stride-2 max pooling over [C,H,W]. Odd extents are padded with -inf,
// so the output is ceil(H/2) x ceil(W/2).
inline Tensor maxpool2d(const Tensor& input) {
  if (input.shape().size() != 3)
    throw shape_error("maxpool2d: input must be [C,H,W], got " + shape_str(input.shape()));
  const int c_n = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(c_n) * ho * wo);
  for (int c = 0; c < c_n; ++c) {
    for (int yo = 0; yo < ho; ++yo) {
      for (int xo = 0; xo < wo; ++xo) {
        double m = -std::numeric_limits<double>::infinity();
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int yi = 2 * yo + dy, xi = 2 * xo + dx;
            if (yi < h && xi < w) m = std::max(m, input.at(c, yi, xi));
          }
        }
        out[(static_cast<std::size_t>(c) * ho + yo) * wo + xo] = m;
      }
    }
  }
  return Tensor({c_n, ho, wo}, std::move(out));
}

// ---- reductions and scans ------------------------------------------------

inline double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return acc;
}

inline double dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) acc += da[i] * db[i];
  return acc;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(const Tensor& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// Lowest index wins ties, so downstream accuracy is deterministic.
inline int argmax(const Tensor& a) {
  int best = 0;
  for (std::int64_t i = 1; i < a.size(); ++i)
    if (a[i] > a[best]) best = static_cast<int>(i);
  return best;
}

// Per-class max over a trajectory of [classes] tensors; argmax_t records the
// first timestep attaining the max for each class.
inline Tensor max_over_time(const std::vector<Tensor>& steps, std::vector<int>* argmax_t = nullptr) {
  if (steps.empty()) throw shape_error("max_over_time: empty trajectory");
  const std::int64_t classes = steps[0].size();
  std::vector<double> out(static_cast<std::size_t>(classes));
  std::vector<int> arg(static_cast<std::size_t>(classes), 0);
  for (std::int64_t c = 0; c < classes; ++c) out[static_cast<std::size_t>(c)] = steps[0][c];
  for (std::size_t t = 1; t < steps.size(); ++t) {
    check_same_shape(steps[t], steps[0], "max_over_time");
    for (std::int64_t c = 0; c < classes; ++c) {
      if (steps[t][c] > out[static_cast<std::size_t>(c)]) {
        out[static_cast<std::size_t>(c)] = steps[t][c];
        arg[static_cast<std::size_t>(c)] = static_cast<int>(t);
      }
    }
  }
  if (argmax_t) *argmax_t = std::move(arg);
  return Tensor({static_cast<int>(classes)}, std::move(out));
}

inline Tensor softmax(const Tensor& logits) {
  double m = logits[0];
  for (std::int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double z = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    out[static_cast<std::size_t>(i)] = std::exp(logits[i] - m);
    z += out[static_cast<std::size_t>(i)];
  }
  for (double& v : out) v /= z;
  return Tensor(logits.shape(), std::move(out));
}

}  // namespace csgru
