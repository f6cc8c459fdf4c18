#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csgru/errors.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// ---- surrogate derivatives -------------------------------------------------

enum class SurrogateKind { triangular, arctan, scaled_tanh };

inline std::string to_string(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::triangular: return "triangular";
    case SurrogateKind::arctan: return "arctan";
    case SurrogateKind::scaled_tanh: return "scaled_tanh";
  }
  return "?";
}

inline SurrogateKind surrogate_kind_from_string(const std::string& s) {
  if (s == "triangular") return SurrogateKind::triangular;
  if (s == "arctan") return SurrogateKind::arctan;
  if (s == "scaled_tanh") return SurrogateKind::scaled_tanh;
  throw config_error("unknown surrogate kind: " + s);
}

// Stand-in derivative for the spike nonlinearity, used only in the backward
// pass. All kinds are even and nonnegative in u = v - v_th.
struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::arctan;
  double gamma = 1.0;  // sharpness
  double v_th = 1.0;   // firing threshold

  void validate() const {
    if (!(gamma > 0.0)) throw config_error("surrogate gamma must be positive");
  }
};

inline double surrogate_psi(double u, const SurrogateSpec& spec) {
  const double g = spec.gamma;
  switch (spec.kind) {
    case SurrogateKind::arctan: {
      const double a = std::numbers::pi * g * u;
      return g / (1.0 + a * a);
    }
    case SurrogateKind::triangular:
      return g * std::max(0.0, 1.0 - g * std::abs(u));
    case SurrogateKind::scaled_tanh: {
      const double th = std::tanh(g * u);
      return g * (1.0 - th * th);
    }
  }
  return 0.0;
}

// Elementwise psi(u); u is already the shifted potential v - v_th.
inline Tensor surrogate_derivative(const Tensor& u, const SurrogateSpec& spec) {
  spec.validate();
  std::vector<double> out(static_cast<std::size_t>(u.size()));
  auto d = u.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = surrogate_psi(d[i], spec);
  return Tensor(u.shape(), std::move(out));
}

// Antiderivative of the arctan psi: a smooth sigmoidal spike used in smooth
// mode, where finite differences of the forward pass are meaningful.
inline double smooth_spike_phi(double u, const SurrogateSpec& spec) {
  return std::atan(std::numbers::pi * spec.gamma * u) / std::numbers::pi + 0.5;
}

// ---- tape ------------------------------------------------------------------

using NodeId = std::int32_t;

// Reverse-mode tape over tensor-valued primitives. Nodes are recorded in
// execution order (inputs always precede consumers); backward sweeps the tape
// once in strict reverse order, which fixes the gradient accumulation order
// and makes repeated backward calls bit-identical.
class Tape {
 public:
  NodeId leaf(Tensor value) { return push(std::move(value), {}); }

  NodeId add(NodeId a, NodeId b) {
    Tensor v = csgru::add(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, std::span<const double> g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  NodeId sub(NodeId a, NodeId b) {
    Tensor v = csgru::sub(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, std::span<const double> g) {
      t.accumulate(a, g);
      auto gb = t.grad_buf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }

  NodeId mul(NodeId a, NodeId b) {
    Tensor v = csgru::mul(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, std::span<const double> g) {
      auto av = t.value(a).data();
      auto bv = t.value(b).data();
      auto ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      auto gb = t.grad_buf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  }

  NodeId scale(NodeId a, double c) {
    Tensor v = csgru::scale(value(a), c);
    return push(std::move(v), [a, c](Tape& t, std::span<const double> g) {
      auto ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }

  // Broadcast multiply by a [1] tensor: out = s[0] * x.
  NodeId scale_by(NodeId s, NodeId x) {
    if (value(s).size() != 1)
      throw tape_error("scale_by: scale node must be scalar");
    Tensor v = csgru::scale(value(x), value(s)[0]);
    return push(std::move(v), [s, x](Tape& t, std::span<const double> g) {
      const double c = t.value(s)[0];
      auto xd = t.value(x).data();
      auto gx = t.grad_buf(x);
      double gs = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += c * g[i];
        gs += g[i] * xd[i];
      }
      t.grad_buf(s)[0] += gs;
    });
  }

  NodeId one_minus(NodeId a) {
    Tensor v = csgru::one_minus(value(a));
    return push(std::move(v), [a](Tape& t, std::span<const double> g) {
      auto ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
    });
  }

  NodeId sigmoid(NodeId a) {
    Tensor v = csgru::sigmoid(value(a));
    NodeId id = push(std::move(v), nullptr);
    nodes_[id].backprop = [a, id](Tape& t, std::span<const double> g) {
      auto y = t.value(id).data();
      auto ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return id;
  }

  NodeId tanh(NodeId a) {
    Tensor v = csgru::tanh(value(a));
    NodeId id = push(std::move(v), nullptr);
    nodes_[id].backprop = [a, id](Tape& t, std::span<const double> g) {
      auto y = t.value(id).data();
      auto ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    };
    return id;
  }

  // Spike nonlinearity on the membrane potential. Forward is the Heaviside
  // step H(v - v_th) (or its smooth stand-in phi in smooth mode); backward
  // substitutes the surrogate derivative psi(v - v_th).
  NodeId spike(NodeId v, const SurrogateSpec& spec, bool smooth) {
    const Tensor& vin = value(v);
    std::vector<double> out(static_cast<std::size_t>(vin.size()));
    auto d = vin.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double u = d[i] - spec.v_th;
      out[i] = smooth ? smooth_spike_phi(u, spec) : (u >= 0.0 ? 1.0 : 0.0);
    }
    Tensor val(vin.shape(), std::move(out));
    return push(std::move(val), [v, spec](Tape& t, std::span<const double> g) {
      auto vv = t.value(v).data();
      auto gv = t.grad_buf(v);
      for (std::size_t i = 0; i < g.size(); ++i)
        gv[i] += g[i] * surrogate_psi(vv[i] - spec.v_th, spec);
    });
  }

  // Copies the value, passes no gradient (reset-path detaching).
  NodeId stop_gradient(NodeId a) { return push(Tensor(value(a)), nullptr); }

  NodeId affine(NodeId w, NodeId x, NodeId b) {
    Tensor v = csgru::affine(value(w), value(x), b >= 0 ? value(b) : Tensor());
    return push(std::move(v), [w, x, b](Tape& t, std::span<const double> g) {
      const Tensor& wt = t.value(w);
      auto wd = wt.data();
      auto xd = t.value(x).data();
      const int out_n = wt.shape()[0], in_n = wt.shape()[1];
      auto gw = t.grad_buf(w);
      auto gx = t.grad_buf(x);
      for (int o = 0; o < out_n; ++o) {
        const double go = g[static_cast<std::size_t>(o)];
        const std::size_t row = static_cast<std::size_t>(o) * in_n;
        for (int i = 0; i < in_n; ++i) {
          gw[row + i] += go * xd[i];
          gx[static_cast<std::size_t>(i)] += go * wd[row + i];
        }
      }
      if (b >= 0) {
        auto gb = t.grad_buf(b);
        for (int o = 0; o < out_n; ++o) gb[static_cast<std::size_t>(o)] += g[o];
      }
    });
  }

  NodeId conv2d(NodeId x, NodeId kernel, NodeId b, ConvGeom geom) {
    Tensor v = csgru::conv2d(value(x), value(kernel), b >= 0 ? value(b) : Tensor(), geom);
    return push(std::move(v), [x, kernel, b, geom](Tape& t, std::span<const double> g) {
      const Tensor& xt = t.value(x);
      const Tensor& kt = t.value(kernel);
      const int ci_n = xt.shape()[0], h = xt.shape()[1], w = xt.shape()[2];
      const int co_n = kt.shape()[0];
      const int ph = geom.kh / 2, pw = geom.kw / 2;
      const int ho = (h + 2 * ph - geom.kh) / geom.sy + 1;
      const int wo = (w + 2 * pw - geom.kw) / geom.sx + 1;
      auto xd = xt.data();
      auto kd = kt.data();
      auto gx = t.grad_buf(x);
      auto gk = t.grad_buf(kernel);
      for (int co = 0; co < co_n; ++co) {
        for (int yo = 0; yo < ho; ++yo) {
          for (int xo = 0; xo < wo; ++xo) {
            const double go = g[(static_cast<std::size_t>(co) * ho + yo) * wo + xo];
            for (int ci = 0; ci < ci_n; ++ci) {
              const std::size_t kbase =
                  ((static_cast<std::size_t>(co) * ci_n + ci) * geom.kh) * geom.kw;
              const std::size_t xbase = static_cast<std::size_t>(ci) * h * w;
              for (int ky = 0; ky < geom.kh; ++ky) {
                const int yi = yo * geom.sy - ph + ky;
                if (yi < 0 || yi >= h) continue;
                for (int kx = 0; kx < geom.kw; ++kx) {
                  const int xi = xo * geom.sx - pw + kx;
                  if (xi < 0 || xi >= w) continue;
                  gk[kbase + ky * geom.kw + kx] += go * xd[xbase + yi * w + xi];
                  gx[xbase + yi * w + xi] += go * kd[kbase + ky * geom.kw + kx];
                }
              }
            }
          }
        }
      }
      if (b >= 0) {
        auto gb = t.grad_buf(b);
        for (int co = 0; co < co_n; ++co) {
          double acc = 0.0;
          for (int i = 0; i < ho * wo; ++i)
            acc += g[static_cast<std::size_t>(co) * ho * wo + i];
          gb[static_cast<std::size_t>(co)] += acc;
        }
      }
    });
  }

  NodeId reshape(NodeId a, Shape shape) {
    Tensor v = value(a).reshaped(std::move(shape));
    return push(std::move(v), [a](Tape& t, std::span<const double> g) {
      t.accumulate(a, g);
    });
  }

  NodeId sum(NodeId a) {
    Tensor v = Tensor::scalar(csgru::sum(value(a)));
    return push(std::move(v), [a](Tape& t, std::span<const double> g) {
      auto ga = t.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
  }

  // Inner product against a constant weighting; handy as a smooth test loss.
  NodeId dot(NodeId a, Tensor weights) {
    Tensor v = Tensor::scalar(csgru::dot(value(a), weights));
    return push(std::move(v), [a, weights](Tape& t, std::span<const double> g) {
      auto ga = t.grad_buf(a);
      auto wd = weights.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * wd[i];
    });
  }

  // Per-class max over the trajectory; gradient routes to the first timestep
  // attaining the max of each class.
  NodeId max_over_time(std::vector<NodeId> steps) {
    if (steps.empty()) throw tape_error("max_over_time: empty trajectory");
    std::vector<Tensor> vals;
    vals.reserve(steps.size());
    for (NodeId s : steps) vals.push_back(value(s));
    std::vector<int> arg;
    Tensor v = csgru::max_over_time(vals, &arg);
    return push(std::move(v), [steps = std::move(steps), arg = std::move(arg)](
                                  Tape& t, std::span<const double> g) {
      for (std::size_t c = 0; c < g.size(); ++c)
        t.grad_buf(steps[static_cast<std::size_t>(arg[c])])[c] += g[c];
    });
  }

  // Numerically stable -log softmax(logits)[label].
  NodeId cross_entropy(NodeId logits, int label) {
    const Tensor& lg = value(logits);
    if (label < 0 || label >= lg.size())
      throw data_error("cross_entropy: label " + std::to_string(label) +
                       " out of range for " + std::to_string(lg.size()) + " classes");
    Tensor p = softmax(lg);
    const double loss = -std::log(p[label]);
    NodeId id = push(Tensor::scalar(loss), nullptr);
    nodes_[id].backprop = [logits, label, p](Tape& t, std::span<const double> g) {
      auto gl = t.grad_buf(logits);
      auto pd = p.data();
      for (std::size_t i = 0; i < gl.size(); ++i) {
        const double onehot = (static_cast<int>(i) == label) ? 1.0 : 0.0;
        gl[i] += g[0] * (pd[i] - onehot);
      }
    };
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }

  // Gradient of the last backward target w.r.t. node id (zeros if untouched).
  Tensor grad(NodeId id) const {
    check(id);
    if (grads_.size() != nodes_.size())
      return Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    const auto& buf = grads_[static_cast<std::size_t>(id)];
    if (buf.empty())
      return Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    return Tensor(nodes_[static_cast<std::size_t>(id)].value.shape(), buf);
  }

  // Accumulates d(loss)/d(node) for every node below the loss, visiting each
  // recorded node exactly once in reverse order.
  void backward(NodeId loss) {
    check(loss);
    if (nodes_[static_cast<std::size_t>(loss)].value.size() != 1)
      throw tape_error("backward: loss node must be scalar, got shape " +
                       shape_str(nodes_[static_cast<std::size_t>(loss)].value.shape()));
    grads_.assign(nodes_.size(), {});
    grad_buf(loss)[0] = 1.0;
    visit_count_ = 0;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      ++visit_count_;
      auto& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.backprop) continue;
      const auto& gbuf = grads_[static_cast<std::size_t>(id)];
      if (gbuf.empty()) continue;  // not an ancestor of the loss
      node.backprop(*this, std::span<const double>(gbuf));
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visit_count() const { return visit_count_; }

  // Zero-initialized mutable gradient buffer for a node (backward pass use).
  std::span<double> grad_buf(NodeId id) {
    auto& buf = grads_[static_cast<std::size_t>(check(id))];
    if (buf.empty())
      buf.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(id)].value.size()), 0.0);
    return buf;
  }

 private:
  struct Node {
    Tensor value;
    std::function<void(Tape&, std::span<const double>)> backprop;  // null for leaves
  };

  NodeId check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw tape_error("unknown node id " + std::to_string(id));
    return id;
  }

  NodeId push(Tensor value, std::function<void(Tape&, std::span<const double>)> backprop) {
    nodes_.push_back(Node{std::move(value), std::move(backprop)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void accumulate(NodeId id, std::span<const double> g) {
    auto buf = grad_buf(id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::size_t visit_count_ = 0;
};

}  // namespace csgru
