#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csgru/autodiff.hpp"
#include "csgru/errors.hpp"
#include "csgru/rng.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// The four toggleable departures from the SpikGRU cell; all four together
// form the CS-GRU. mod4 selects the arctan surrogate and is consumed by the
// gradient configuration, not by the step equations.
struct ModSet {
  bool mod1 = false;  // learned gate replaces the fixed current decay
  bool mod2 = false;  // update gate reads the synaptic current
  bool mod3 = false;  // convolutional operators replace dense ones
  bool mod4 = false;  // arctan surrogate derivative

  bool any() const { return mod1 || mod2 || mod3 || mod4; }
  std::string label() const {
    if (!any()) return "SpikGRU";
    std::string s = "SpikGRU";
    const bool m[4] = {mod1, mod2, mod3, mod4};
    bool first = true;
    for (int i = 0; i < 4; ++i) {
      if (!m[i]) continue;
      s += first ? "-mod" : "-";
      s += std::to_string(i + 1);
      first = false;
    }
    return s;
  }
};

enum class CellKind { gru, cuba_lif, spikgru, variant };

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::gru: return "gru";
    case CellKind::cuba_lif: return "cuba_lif";
    case CellKind::spikgru: return "spikgru";
    case CellKind::variant: return "variant";
  }
  return "?";
}

inline CellKind cell_kind_from_string(const std::string& s) {
  if (s == "gru") return CellKind::gru;
  if (s == "cuba_lif") return CellKind::cuba_lif;
  if (s == "spikgru") return CellKind::spikgru;
  if (s == "variant") return CellKind::variant;
  throw config_error("unknown cell kind: " + s);
}

// ---- ops policies ----------------------------------------------------------
//
// The cell equations below are written once, templated over an ops policy.
// EvalOps computes plain tensors (inference, oracles); TapeOps records the
// same primitive sequence on an autodiff tape. Both perform identical double
// arithmetic in identical order, so eval and tape forwards agree bitwise.

struct EvalOps {
  using V = Tensor;
  SurrogateSpec surrogate;
  bool smooth = false;
  bool detach_reset = false;

  static V none() { return Tensor(); }
  static bool defined(const V& v) { return v.defined(); }

  V constant(const Tensor& t) const { return t; }
  V add(const V& a, const V& b) const { return csgru::add(a, b); }
  V sub(const V& a, const V& b) const { return csgru::sub(a, b); }
  V mul(const V& a, const V& b) const { return csgru::mul(a, b); }
  V scale(const V& a, double c) const { return csgru::scale(a, c); }
  V scale_by(const V& s, const V& x) const { return csgru::scale(x, s[0]); }
  V one_minus(const V& a) const { return csgru::one_minus(a); }
  V sigmoid(const V& a) const { return csgru::sigmoid(a); }
  V tanh(const V& a) const { return csgru::tanh(a); }
  V reshape(const V& a, Shape s) const { return a.reshaped(std::move(s)); }
  V detach(const V& a) const { return a; }

  // Dense or convolutional operator application; bias may be undefined.
  template <class L>
  V linear(const L& op, const V& x, const V& bias) const {
    if (op.conv) return csgru::conv2d(x, op.weight, bias, op.geom);
    return csgru::affine(op.weight, x, bias);
  }

  V spike(const V& v, double v_th) const {
    if (smooth && surrogate.kind != SurrogateKind::arctan)
      throw config_error("smooth mode requires the arctan surrogate");
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    auto d = v.data();
    SurrogateSpec s = surrogate;
    s.v_th = v_th;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double u = d[i] - v_th;
      out[i] = smooth ? smooth_spike_phi(u, s) : (u >= 0.0 ? 1.0 : 0.0);
    }
    return Tensor(v.shape(), std::move(out));
  }

  double scalar_of(const V& v) const { return v[0]; }
  const Tensor& tensor_of(const V& v) const { return v; }
};

struct TapeOps {
  using V = NodeId;
  Tape& tape;
  SurrogateSpec surrogate;
  bool smooth = false;
  bool detach_reset = false;

  static V none() { return -1; }
  static bool defined(V v) { return v >= 0; }

  V constant(const Tensor& t) const { return tape.leaf(t); }
  V add(V a, V b) const { return tape.add(a, b); }
  V sub(V a, V b) const { return tape.sub(a, b); }
  V mul(V a, V b) const { return tape.mul(a, b); }
  V scale(V a, double c) const { return tape.scale(a, c); }
  V scale_by(V s, V x) const { return tape.scale_by(s, x); }
  V one_minus(V a) const { return tape.one_minus(a); }
  V sigmoid(V a) const { return tape.sigmoid(a); }
  V tanh(V a) const { return tape.tanh(a); }
  V reshape(V a, Shape s) const { return tape.reshape(a, std::move(s)); }
  V detach(V a) const { return tape.stop_gradient(a); }

  template <class L>
  V linear(const L& op, V x, V bias) const {
    if (op.conv) return tape.conv2d(x, op.weight, bias, op.geom);
    return tape.affine(op.weight, x, bias);
  }

  V spike(V v, double v_th) const {
    if (smooth && surrogate.kind != SurrogateKind::arctan)
      throw config_error("smooth mode requires the arctan surrogate");
    SurrogateSpec s = surrogate;
    s.v_th = v_th;
    return tape.spike(v, s, smooth);
  }

  double scalar_of(V v) const { return tape.value(v)[0]; }
  const Tensor& tensor_of(V v) const { return tape.value(v); }
};

// ---- parameter storage -----------------------------------------------------

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// A per-gate operator: dense matrix [out,in] or conv kernel [Co,Ci,kh,kw],
// referenced by index into the network's flat parameter list.
struct LinearSlot {
  int w = -1;
  bool conv = false;
  ConvGeom geom;
};

struct CellSlots {
  LinearSlot w_i, u_i, w_z, u_z, w_r, u_r;  // r-gate slots only when mod1
  int b_i = -1, b_z = -1, b_r = -1;
  int alpha_raw = -1;  // sigmoid(alpha_raw) = current decay (mod1 off)
  int beta_raw = -1;   // sigmoid(beta_raw) = membrane decay (Cuba-LIF)
  Shape state_shape;   // [n] dense, [C,H,W] conv
};

struct GruSlots {
  LinearSlot w_z, u_z, w_r, u_r, w_h, u_h;
  int b_z = -1, b_r = -1, b_h = -1;
  Shape state_shape;
};

struct ReadoutSlots {
  int w = -1, b = -1, alpha_raw = -1;
};

struct FrontConvSlots {
  int w = -1, b = -1;
  ConvGeom geom;
};

// Learnable strided downsampling conv placed in front of the first layer.
struct DownConvSpec {
  int out_channels = 1;
  int kh = 3, kw = 3;
  int sy = 1, sx = 1;
};

struct NetworkConfig {
  CellKind kind = CellKind::variant;
  ModSet mods;
  SurrogateSpec surrogate;
  int n_layers = 1;
  int hidden = 128;          // dense layer width
  Shape hidden_grid;         // conv arrangement [C,H,W] when mod3
  int kernel = 3;            // conv kernel size when mod3
  int classes = 3;
  Shape input_shape;         // [C,H,W] after the data pipeline
  std::optional<DownConvSpec> front;
  double v_th = 1.0;
  double decay_init = 0.9;
  // Small positive drive bias; a zero-bias current leaves every membrane
  // below v_th on sparse binary inputs and the network never fires.
  double current_bias_init = 0.3;
  bool learn_decay = true;
  bool detach_reset = false;
};

struct Network {
  NetworkConfig config;
  std::vector<Param> params;
  std::vector<CellSlots> layers;  // spiking kinds
  std::vector<GruSlots> gru_layers;
  ReadoutSlots readout;
  std::optional<FrontConvSlots> front;

  Param& param(int idx) { return params[static_cast<std::size_t>(idx)]; }
  const Param& param(int idx) const { return params[static_cast<std::size_t>(idx)]; }
};

// ---- network construction --------------------------------------------------

namespace detail {

inline Tensor uniform_tensor(Rng& rng, Shape shape, double bound) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)));
  for (double& v : d) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(d));
}

struct NetBuilder {
  Network& net;
  Rng& rng;

  int push(std::string name, Tensor value, bool trainable) {
    net.params.push_back(Param{std::move(name), std::move(value), trainable});
    return static_cast<int>(net.params.size() - 1);
  }

  // Dense weights uniform in +-sqrt(1/fan_in); conv kernels uniform in
  // +-sqrt(1/(Ci*kh*kw)).
  LinearSlot dense(const std::string& name, int out_n, int in_n) {
    const double bound = std::sqrt(1.0 / in_n);
    LinearSlot s;
    s.w = push(name, uniform_tensor(rng, {out_n, in_n}, bound), true);
    return s;
  }

  LinearSlot conv(const std::string& name, int co, int ci, int kh, int kw, int sy = 1,
                  int sx = 1) {
    const double bound = std::sqrt(1.0 / (static_cast<double>(ci) * kh * kw));
    LinearSlot s;
    s.w = push(name, uniform_tensor(rng, {co, ci, kh, kw}, bound), true);
    s.conv = true;
    s.geom = ConvGeom{kh, kw, sy, sx};
    return s;
  }

  LinearSlot op(const std::string& name, bool conv_kind, int out_n, int in_n, int co, int ci,
                int k) {
    return conv_kind ? conv(name, co, ci, k, k) : dense(name, out_n, in_n);
  }

  int bias(const std::string& name, int n, double init = 0.0) {
    return push(name, Tensor::full({n}, init), true);
  }

  int decay(const std::string& name, Shape shape, double value, bool learnable) {
    return push(name, Tensor::full(std::move(shape), logit(value)), learnable);
  }
};

}  // namespace detail

// Builds and initializes a network. Parameter creation order is fixed, so a
// given (config, seed) pair always yields identical parameters.
inline Network build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.surrogate.validate();
  if (cfg.input_shape.size() != 3)
    throw config_error("network input shape must be [C,H,W], got " +
                       shape_str(cfg.input_shape));
  const bool conv_cell = cfg.kind == CellKind::variant && cfg.mods.mod3;
  if (conv_cell) {
    if (cfg.hidden_grid.size() != 3)
      throw config_error("mod3 requires a spatial hidden grid [C,H,W]");
    if (cfg.kernel % 2 == 0) throw config_error("mod3 kernel size must be odd");
  }

  Network net;
  net.config = cfg;
  Rng rng(seed);
  detail::NetBuilder b{net, rng};

  // Input shape seen by the first layer, after the optional front conv.
  Shape in_shape = cfg.input_shape;
  if (cfg.front) {
    const DownConvSpec& f = *cfg.front;
    if (f.kh % 2 == 0 || f.kw % 2 == 0)
      throw config_error("front conv kernel size must be odd");
    FrontConvSlots fc;
    fc.geom = ConvGeom{f.kh, f.kw, f.sy, f.sx};
    fc.w = b.conv("front.w", f.out_channels, in_shape[0], f.kh, f.kw, f.sy, f.sx).w;
    fc.b = b.bias("front.b", f.out_channels);
    net.front = fc;
    Tensor probe = Tensor::zeros({f.out_channels, in_shape[0], f.kh, f.kw});
    in_shape = conv2d_out_shape(cfg.input_shape, probe, fc.geom);
  }

  const int classes = cfg.classes;
  int readout_in = 0;

  if (cfg.kind == CellKind::gru) {
    int in_n = static_cast<int>(numel(in_shape));
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      GruSlots g;
      g.state_shape = {cfg.hidden};
      g.w_z = b.dense(p + "z.w", cfg.hidden, in_n);
      g.u_z = b.dense(p + "z.u", cfg.hidden, cfg.hidden);
      g.b_z = b.bias(p + "z.b", cfg.hidden, logit(cfg.decay_init));
      g.w_r = b.dense(p + "r.w", cfg.hidden, in_n);
      g.u_r = b.dense(p + "r.u", cfg.hidden, cfg.hidden);
      g.b_r = b.bias(p + "r.b", cfg.hidden);
      g.w_h = b.dense(p + "h.w", cfg.hidden, in_n);
      g.u_h = b.dense(p + "h.u", cfg.hidden, cfg.hidden);
      g.b_h = b.bias(p + "h.b", cfg.hidden);
      net.gru_layers.push_back(std::move(g));
      in_n = cfg.hidden;
    }
    readout_in = cfg.hidden;
  } else {
    const bool mod1 = cfg.kind == CellKind::variant && cfg.mods.mod1;
    Shape state_shape = conv_cell ? cfg.hidden_grid : Shape{cfg.hidden};
    const int hidden_n = static_cast<int>(numel(state_shape));
    int in_n = static_cast<int>(numel(in_shape));
    int in_c = in_shape[0];
    if (conv_cell && (in_shape[1] != state_shape[1] || in_shape[2] != state_shape[2]))
      throw config_error("mod3 hidden grid " + shape_str(state_shape) +
                         " must match input spatial extent " + shape_str(in_shape));
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      CellSlots c;
      c.state_shape = state_shape;
      const int sc = conv_cell ? state_shape[0] : 0;  // state channels
      // conv biases are per output channel, dense biases per unit
      const int bias_n = conv_cell ? sc : hidden_n;
      if (mod1) {
        c.w_r = b.op(p + "r.w", conv_cell, hidden_n, in_n, sc, in_c, cfg.kernel);
        c.u_r = b.op(p + "r.u", conv_cell, hidden_n, hidden_n, sc, sc, cfg.kernel);
        // the r gate stands in for alpha, so it starts at the same retention
        c.b_r = b.bias(p + "r.b", bias_n, logit(cfg.decay_init));
      }
      c.w_i = b.op(p + "i.w", conv_cell, hidden_n, in_n, sc, in_c, cfg.kernel);
      c.u_i = b.op(p + "i.u", conv_cell, hidden_n, hidden_n, sc, sc, cfg.kernel);
      c.b_i = b.bias(p + "i.b", bias_n, cfg.current_bias_init);
      if (cfg.kind != CellKind::cuba_lif) {
        // mod2 reads the current (state channels); otherwise the layer input.
        const bool z_reads_current = cfg.kind == CellKind::variant && cfg.mods.mod2;
        const int z_in_n = z_reads_current ? hidden_n : in_n;
        const int z_in_c = z_reads_current ? sc : in_c;
        c.w_z = b.op(p + "z.w", conv_cell, hidden_n, z_in_n, sc, z_in_c, cfg.kernel);
        c.u_z = b.op(p + "z.u", conv_cell, hidden_n, hidden_n, sc, sc, cfg.kernel);
        c.b_z = b.bias(p + "z.b", bias_n, logit(cfg.decay_init));
      }
      if (!mod1)
        c.alpha_raw = b.decay(p + "alpha", state_shape, cfg.decay_init, cfg.learn_decay);
      if (cfg.kind == CellKind::cuba_lif)
        c.beta_raw = b.decay(p + "beta", state_shape, cfg.decay_init, cfg.learn_decay);
      net.layers.push_back(std::move(c));
      in_n = hidden_n;
      in_c = conv_cell ? state_shape[0] : 0;
    }
    readout_in = hidden_n;
  }

  net.readout.w = b.dense("readout.w", classes, readout_in).w;
  net.readout.b = b.bias("readout.b", classes);
  net.readout.alpha_raw = b.decay("readout.alpha", {1}, cfg.decay_init, cfg.learn_decay);
  return net;
}

// ---- bound views -----------------------------------------------------------
//
// Binding maps the flat parameter list into an ops domain (tensors for eval,
// leaf nodes for a tape) and assembles gate-ready views: decay parameters are
// passed through sigmoid here so their gradients flow to the raw tensors.

template <class V>
struct BoundLinear {
  V weight{};
  bool conv = false;
  ConvGeom geom;
};

template <class V>
struct BoundCell {
  BoundLinear<V> w_i, u_i, w_z, u_z, w_r, u_r;
  V b_i{}, b_z{}, b_r{};
  V alpha{}, beta{};  // post-sigmoid
  double v_th = 1.0;
  bool has_r = false, has_z = false, has_beta = false;
  Shape state_shape;
};

template <class V>
struct BoundGru {
  BoundLinear<V> w_z, u_z, w_r, u_r, w_h, u_h;
  V b_z{}, b_r{}, b_h{};
  Shape state_shape;
};

template <class V>
struct BoundReadout {
  V weight{}, bias{}, alpha{};
};

template <class V>
struct BoundFront {
  V weight{}, bias{};
  ConvGeom geom;
};

template <class V>
struct BoundNet {
  std::vector<V> slots;  // aligned with Network::params
  std::vector<BoundCell<V>> layers;
  std::vector<BoundGru<V>> gru_layers;
  BoundReadout<V> readout;
  std::optional<BoundFront<V>> front;
};

namespace detail {

template <class Ops, class V = typename Ops::V>
BoundLinear<V> bind_linear(const std::vector<V>& slots, const LinearSlot& s) {
  BoundLinear<V> out;
  if (s.w >= 0) out.weight = slots[static_cast<std::size_t>(s.w)];
  out.conv = s.conv;
  out.geom = s.geom;
  return out;
}

}  // namespace detail

template <class Ops, class V = typename Ops::V>
BoundNet<V> bind_network(Ops& ops, const Network& net) {
  BoundNet<V> b;
  b.slots.reserve(net.params.size());
  for (const Param& p : net.params) b.slots.push_back(ops.constant(p.value));
  auto at = [&](int idx) { return idx >= 0 ? b.slots[static_cast<std::size_t>(idx)] : Ops::none(); };

  for (const CellSlots& c : net.layers) {
    BoundCell<V> bc;
    bc.w_i = detail::bind_linear<Ops>(b.slots, c.w_i);
    bc.u_i = detail::bind_linear<Ops>(b.slots, c.u_i);
    bc.w_z = detail::bind_linear<Ops>(b.slots, c.w_z);
    bc.u_z = detail::bind_linear<Ops>(b.slots, c.u_z);
    bc.w_r = detail::bind_linear<Ops>(b.slots, c.w_r);
    bc.u_r = detail::bind_linear<Ops>(b.slots, c.u_r);
    bc.b_i = at(c.b_i);
    bc.b_z = at(c.b_z);
    bc.b_r = at(c.b_r);
    bc.has_r = c.b_r >= 0;
    bc.has_z = c.b_z >= 0;
    bc.has_beta = c.beta_raw >= 0;
    if (c.alpha_raw >= 0) bc.alpha = ops.sigmoid(at(c.alpha_raw));
    if (c.beta_raw >= 0) bc.beta = ops.sigmoid(at(c.beta_raw));
    bc.v_th = net.config.v_th;
    bc.state_shape = c.state_shape;
    b.layers.push_back(std::move(bc));
  }
  for (const GruSlots& g : net.gru_layers) {
    BoundGru<V> bg;
    bg.w_z = detail::bind_linear<Ops>(b.slots, g.w_z);
    bg.u_z = detail::bind_linear<Ops>(b.slots, g.u_z);
    bg.w_r = detail::bind_linear<Ops>(b.slots, g.w_r);
    bg.u_r = detail::bind_linear<Ops>(b.slots, g.u_r);
    bg.w_h = detail::bind_linear<Ops>(b.slots, g.w_h);
    bg.u_h = detail::bind_linear<Ops>(b.slots, g.u_h);
    bg.b_z = at(g.b_z);
    bg.b_r = at(g.b_r);
    bg.b_h = at(g.b_h);
    bg.state_shape = g.state_shape;
    b.gru_layers.push_back(std::move(bg));
  }
  b.readout.weight = at(net.readout.w);
  b.readout.bias = at(net.readout.b);
  b.readout.alpha = ops.sigmoid(at(net.readout.alpha_raw));
  if (net.front) {
    BoundFront<V> bf;
    bf.weight = at(net.front->w);
    bf.bias = at(net.front->b);
    bf.geom = net.front->geom;
    b.front = std::move(bf);
  }
  return b;
}

// ---- cell equations --------------------------------------------------------

template <class V>
struct CellStateT {
  V i{}, v{}, s{};
};
using CellState = CellStateT<Tensor>;

template <class V>
struct StepOut {
  CellStateT<V> state;
  V z{}, r{};
  bool has_z = false, has_r = false;
};

// W.x (+ U.y + bias), the shared preactivation of every gate and current
// update. Keeping one composition order here makes the reduction
// equivalences between cell kinds exact.
template <class Ops, class V = typename Ops::V>
V wsum(Ops& ops, const BoundLinear<V>& w, const V& x, const BoundLinear<V>& u, const V& y,
       const V& bias) {
  V a = ops.linear(w, x, Ops::none());
  V b = ops.linear(u, y, bias);
  return ops.add(a, b);
}

// i_t = retain (.) i_prev + W x + U s_prev + b, where retain is the fixed
// decay alpha or the mod1 gate r_t.
template <class Ops, class V = typename Ops::V>
V current_update(Ops& ops, const V& retain, const V& i_prev, const BoundLinear<V>& w,
                 const V& x, const BoundLinear<V>& u, const V& s_prev, const V& bias) {
  return ops.add(ops.mul(retain, i_prev), wsum(ops, w, x, u, s_prev, bias));
}

template <class Ops, class V = typename Ops::V>
V gate(Ops& ops, const BoundLinear<V>& w, const V& a, const BoundLinear<V>& u, const V& b,
       const V& bias) {
  return ops.sigmoid(wsum(ops, w, a, u, b, bias));
}

// v_t = z (.) v_prev + (1-z) (.) i_t - v_th s_prev  (soft reset by threshold
// subtraction; s_prev optionally detached from the gradient path).
template <class Ops, class V = typename Ops::V>
V membrane_update(Ops& ops, const V& z, const V& v_prev, const V& i_t, const V& s_prev,
                  double v_th) {
  V blend = ops.add(ops.mul(z, v_prev), ops.mul(ops.one_minus(z), i_t));
  V reset_src = ops.detach_reset ? ops.detach(s_prev) : s_prev;
  return ops.sub(blend, ops.scale(reset_src, v_th));
}

template <class Ops, class V = typename Ops::V>
StepOut<V> cuba_lif_step(Ops& ops, const CellStateT<V>& st, const V& x, const BoundCell<V>& p) {
  StepOut<V> out;
  V i_t = current_update(ops, p.alpha, st.i, p.w_i, x, p.u_i, st.s, p.b_i);
  V v_t = membrane_update(ops, p.beta, st.v, i_t, st.s, p.v_th);
  V s_t = ops.spike(v_t, p.v_th);
  out.state = {i_t, v_t, s_t};
  return out;
}

template <class Ops, class V = typename Ops::V>
StepOut<V> spikgru_step(Ops& ops, const CellStateT<V>& st, const V& x, const BoundCell<V>& p) {
  StepOut<V> out;
  V i_t = current_update(ops, p.alpha, st.i, p.w_i, x, p.u_i, st.s, p.b_i);
  V z_t = gate(ops, p.w_z, x, p.u_z, st.s, p.b_z);
  V v_t = membrane_update(ops, z_t, st.v, i_t, st.s, p.v_th);
  V s_t = ops.spike(v_t, p.v_th);
  out.state = {i_t, v_t, s_t};
  out.z = z_t;
  out.has_z = true;
  return out;
}

// The parameterized cell: SpikGRU plus any subset of mod1 (gated current),
// mod2 (current-conditioned update gate) and mod3 (selected upstream via
// convolutional operators). With all mods off this reduces exactly to
// spikgru_step.
template <class Ops, class V = typename Ops::V>
StepOut<V> variant_step(Ops& ops, const CellStateT<V>& st, const V& x, const BoundCell<V>& p,
                        const ModSet& mods) {
  StepOut<V> out;
  V i_t{};
  if (mods.mod1) {
    V r_t = gate(ops, p.w_r, x, p.u_r, st.s, p.b_r);
    i_t = current_update(ops, r_t, st.i, p.w_i, x, p.u_i, st.s, p.b_i);
    out.r = r_t;
    out.has_r = true;
  } else {
    i_t = current_update(ops, p.alpha, st.i, p.w_i, x, p.u_i, st.s, p.b_i);
  }
  V z_t = mods.mod2 ? gate(ops, p.w_z, i_t, p.u_z, st.s, p.b_z)
                    : gate(ops, p.w_z, x, p.u_z, st.s, p.b_z);
  V v_t = membrane_update(ops, z_t, st.v, i_t, st.s, p.v_th);
  V s_t = ops.spike(v_t, p.v_th);
  out.state = {i_t, v_t, s_t};
  out.z = z_t;
  out.has_z = true;
  return out;
}

template <class Ops, class V = typename Ops::V>
V gru_step(Ops& ops, const V& h_prev, const V& x, const BoundGru<V>& p) {
  V z = gate(ops, p.w_z, x, p.u_z, h_prev, p.b_z);
  V r = gate(ops, p.w_r, x, p.u_r, h_prev, p.b_r);
  V h_tilde = ops.tanh(wsum(ops, p.w_h, x, p.u_h, ops.mul(h_prev, r), p.b_h));
  return ops.add(ops.mul(z, h_prev), ops.mul(ops.one_minus(z), h_tilde));
}

// out_t = alpha_out * out_prev + W_out x_t + b. Self-recurrent integrator;
// no spiking, no reset.
template <class Ops, class V = typename Ops::V>
V readout_step(Ops& ops, const V& out_prev, const V& x, const BoundReadout<V>& p) {
  V carried = ops.scale_by(p.alpha, out_prev);
  V drive = ops.linear(BoundLinear<V>{p.weight, false, {}}, x, p.bias);
  return ops.add(carried, drive);
}

// ---- sequence unrolling ----------------------------------------------------

template <class V>
struct UnrollOut {
  std::vector<V> readout;               // [T], each [classes]
  std::vector<std::vector<V>> spikes;   // [layers][T], spiking cells only
};

// Extracts the [C,H,W] slice at timestep t of a [T,C,H,W] sequence.
inline Tensor seq_slice(const Tensor& seq, int t) {
  const Shape& s = seq.shape();
  const std::int64_t n = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  std::vector<double> d(static_cast<std::size_t>(n));
  auto src = seq.data();
  for (std::int64_t i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = src[t * n + i];
  return Tensor({s[1], s[2], s[3]}, std::move(d));
}

// Runs the layer stack over a [T,C,H,W] input sequence from zero initial
// states. Each layer consumes the layer below at the current timestep and its
// own spikes from the previous one; all hidden spike trains are recorded.
template <class Ops, class V = typename Ops::V>
UnrollOut<V> unroll(Ops& ops, const Network& net, const BoundNet<V>& b, const Tensor& seq) {
  if (seq.shape().size() != 4)
    throw shape_error("unroll: sequence must be [T,C,H,W], got " + shape_str(seq.shape()));
  const int t_n = seq.shape()[0];
  if (t_n < 1) throw data_error("unroll: empty sequence");
  const bool is_gru = net.config.kind == CellKind::gru;
  const bool conv_cell = !is_gru && net.config.kind == CellKind::variant && net.config.mods.mod3;

  UnrollOut<V> out;
  out.spikes.resize(net.layers.size());

  std::vector<CellStateT<V>> states(net.layers.size());
  std::vector<V> gru_states(net.gru_layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    V zero = ops.constant(Tensor::zeros(net.layers[l].state_shape));
    states[l] = {zero, zero, zero};
  }
  for (std::size_t l = 0; l < net.gru_layers.size(); ++l)
    gru_states[l] = ops.constant(Tensor::zeros(net.gru_layers[l].state_shape));

  V readout_state = ops.constant(Tensor::zeros({net.config.classes}));

  for (int t = 0; t < t_n; ++t) {
    V x = ops.constant(seq_slice(seq, t));
    if (b.front) {
      x = ops.linear(BoundLinear<V>{b.front->weight, true, b.front->geom}, x, b.front->bias);
    }
    if (is_gru) {
      V flat = ops.reshape(x, {static_cast<int>(ops.tensor_of(x).size())});
      for (std::size_t l = 0; l < net.gru_layers.size(); ++l) {
        gru_states[l] = gru_step(ops, gru_states[l], flat, b.gru_layers[l]);
        flat = gru_states[l];
      }
      readout_state = readout_step(ops, readout_state, flat, b.readout);
    } else {
      if (!conv_cell) x = ops.reshape(x, {static_cast<int>(ops.tensor_of(x).size())});
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        StepOut<V> so;
        switch (net.config.kind) {
          case CellKind::cuba_lif:
            so = cuba_lif_step(ops, states[l], x, b.layers[l]);
            break;
          case CellKind::spikgru:
            so = spikgru_step(ops, states[l], x, b.layers[l]);
            break;
          default:
            so = variant_step(ops, states[l], x, b.layers[l], net.config.mods);
            break;
        }
        states[l] = so.state;
        out.spikes[l].push_back(so.state.s);
        x = so.state.s;
      }
      V flat = conv_cell ? ops.reshape(x, {static_cast<int>(numel(b.layers.back().state_shape))})
                         : x;
      readout_state = readout_step(ops, readout_state, flat, b.readout);
    }
    out.readout.push_back(readout_state);
  }
  return out;
}

// Plain-tensor forward pass; spike values in the result are real tensors.
inline UnrollOut<Tensor> forward_eval(const Network& net, const Tensor& seq, bool smooth = false) {
  EvalOps ops{net.config.surrogate, smooth, net.config.detach_reset};
  BoundNet<Tensor> b = bind_network(ops, net);
  return unroll(ops, net, b, seq);
}

// Forward pass with every spike nonlinearity replaced by the smooth arctan
// primitive, so finite differences of the output are meaningful.
inline UnrollOut<Tensor> smooth_mode_forward(const Network& net, const Tensor& seq) {
  return forward_eval(net, seq, /*smooth=*/true);
}

}  // namespace csgru
