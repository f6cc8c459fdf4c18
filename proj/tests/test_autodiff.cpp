#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "csgru/autodiff.hpp"
#include "csgru/rng.hpp"
#include "csgru/tensor.hpp"

using namespace csgru;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(d));
}

// Central finite differences of a scalar function of one tensor input.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   double h = 1e-6) {
  std::vector<double> g(static_cast<std::size_t>(x.size()));
  for (std::int64_t i = 0; i < x.size(); ++i) {
    std::vector<double> plus(x.data().begin(), x.data().end());
    std::vector<double> minus(x.data().begin(), x.data().end());
    plus[static_cast<std::size_t>(i)] += h;
    minus[static_cast<std::size_t>(i)] -= h;
    g[static_cast<std::size_t>(i)] =
        (f(Tensor(x.shape(), std::move(plus))) - f(Tensor(x.shape(), std::move(minus)))) /
        (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

double max_rel_err(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6) {
  double m = 0.0;
  for (std::int64_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    m = std::max(m, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return m;
}

// Checks one primitive: builds loss = dot(r, op(inputs...)), compares the
// tape gradient of each input against finite differences.
void check_primitive(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
                     const std::vector<Tensor>& inputs, Rng& rng, double tol = 1e-6) {
  Tape probe_tape;
  std::vector<NodeId> probe_ids;
  for (const Tensor& t : inputs) probe_ids.push_back(probe_tape.leaf(t));
  Tensor r = random_tensor(rng, probe_tape.value(build(probe_tape, probe_ids)).shape());

  Tape tape;
  std::vector<NodeId> ids;
  for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
  NodeId loss = tape.dot(build(tape, ids), r);
  tape.backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& x) {
      Tape t2;
      std::vector<NodeId> ids2;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        ids2.push_back(t2.leaf(j == k ? x : inputs[j]));
      return t2.value(t2.dot(build(t2, ids2), r))[0];
    };
    Tensor numeric = fd_gradient(f, inputs[k]);
    Tensor analytic = tape.grad(ids[k]);
    CHECK(max_rel_err(analytic, numeric) < tol);
  }
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("record and backward basics") {
  Tape t;
  NodeId a = t.leaf(Tensor({2}, {1.0, 2.0}));
  NodeId b = t.leaf(Tensor({2}, {3.0, 4.0}));

  SUBCASE("add routes unit gradient to both inputs") {
    NodeId s = t.sum(t.add(a, b));
    t.backward(s);
    CHECK(t.grad(a)[0] == 1.0);
    CHECK(t.grad(a)[1] == 1.0);
    CHECK(t.grad(b)[0] == 1.0);
  }

  SUBCASE("mul implements the product rule") {
    NodeId s = t.sum(t.mul(a, b));
    t.backward(s);
    CHECK(t.grad(a)[0] == 3.0);
    CHECK(t.grad(a)[1] == 4.0);
    CHECK(t.grad(b)[0] == 1.0);
    CHECK(t.grad(b)[1] == 2.0);
  }

  SUBCASE("x squared via mul(x,x)") {
    Tape t2;
    NodeId x = t2.leaf(Tensor::scalar(3.0));
    NodeId y = t2.mul(x, x);
    t2.backward(y);
    CHECK(t2.grad(x)[0] == 6.0);
  }

  SUBCASE("constant loss gives zero gradients") {
    NodeId c = t.leaf(Tensor::scalar(7.0));
    t.backward(c);
    CHECK(t.grad(a)[0] == 0.0);
    CHECK(t.grad(b)[1] == 0.0);
  }
}

TEST_CASE("tape errors") {
  Tape t;
  NodeId a = t.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(t.add(a, 57), tape_error);
  CHECK_THROWS_AS(t.backward(a), tape_error);  // loss not scalar
  CHECK_THROWS_AS(t.value(-3), tape_error);
}

TEST_CASE("affine bias gradient is all ones under sum") {
  Tape t;
  Rng rng(2);
  NodeId w = t.leaf(random_tensor(rng, {3, 4}));
  NodeId x = t.leaf(random_tensor(rng, {4}));
  NodeId b = t.leaf(random_tensor(rng, {3}));
  NodeId loss = t.sum(t.affine(w, x, b));
  t.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(t.grad(b)[i] == 1.0);
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(17);

  SUBCASE("add/sub/mul/scale/one_minus") {
    std::vector<Tensor> in = {random_tensor(rng, {5}), random_tensor(rng, {5})};
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.add(v[0], v[1]); }, in, rng);
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.sub(v[0], v[1]); }, in, rng);
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.mul(v[0], v[1]); }, in, rng);
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.scale(v[0], -1.3); },
                    {in[0]}, rng);
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.one_minus(v[0]); },
                    {in[0]}, rng);
  }

  SUBCASE("sigmoid/tanh") {
    std::vector<Tensor> in = {random_tensor(rng, {6})};
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.sigmoid(v[0]); }, in, rng);
    check_primitive([](Tape& t, const std::vector<NodeId>& v) { return t.tanh(v[0]); }, in, rng);
  }

  SUBCASE("affine") {
    std::vector<Tensor> in = {random_tensor(rng, {3, 4}), random_tensor(rng, {4}),
                              random_tensor(rng, {3})};
    check_primitive(
        [](Tape& t, const std::vector<NodeId>& v) { return t.affine(v[0], v[1], v[2]); }, in, rng);
  }

  SUBCASE("conv2d") {
    std::vector<Tensor> in = {random_tensor(rng, {2, 5, 4}), random_tensor(rng, {3, 2, 3, 3}),
                              random_tensor(rng, {3})};
    check_primitive(
        [](Tape& t, const std::vector<NodeId>& v) {
          return t.conv2d(v[0], v[1], v[2], ConvGeom{3, 3, 1, 1});
        },
        in, rng);
  }

  SUBCASE("strided conv2d") {
    std::vector<Tensor> in = {random_tensor(rng, {2, 6, 6}), random_tensor(rng, {2, 2, 3, 3}),
                              random_tensor(rng, {2})};
    check_primitive(
        [](Tape& t, const std::vector<NodeId>& v) {
          return t.conv2d(v[0], v[1], v[2], ConvGeom{3, 3, 2, 2});
        },
        in, rng);
  }

  SUBCASE("scale_by") {
    std::vector<Tensor> in = {random_tensor(rng, {1}), random_tensor(rng, {4})};
    check_primitive(
        [](Tape& t, const std::vector<NodeId>& v) { return t.scale_by(v[0], v[1]); }, in, rng);
  }

  SUBCASE("smooth spike") {
    SurrogateSpec spec;  // arctan, gamma 1, v_th 1
    std::vector<Tensor> in = {random_tensor(rng, {6})};
    check_primitive(
        [spec](Tape& t, const std::vector<NodeId>& v) { return t.spike(v[0], spec, true); }, in,
        rng);
  }
}

TEST_CASE("surrogate derivative formulas") {
  SurrogateSpec arc{SurrogateKind::arctan, 1.0, 1.0};
  CHECK(surrogate_psi(0.0, arc) == 1.0);
  const double half = 1.0 / (1.0 + std::pow(std::numbers::pi / 2.0, 2.0));
  CHECK(surrogate_psi(0.5, arc) == doctest::Approx(half).epsilon(1e-12));
  CHECK(surrogate_psi(0.5, arc) == doctest::Approx(0.2884).epsilon(1e-3));
  CHECK(surrogate_psi(-0.5, arc) == surrogate_psi(0.5, arc));

  SurrogateSpec tri{SurrogateKind::triangular, 1.0, 1.0};
  CHECK(surrogate_psi(2.0, tri) == 0.0);  // outside support
  CHECK(surrogate_psi(0.0, tri) == 1.0);

  SurrogateSpec sth{SurrogateKind::scaled_tanh, 1.0, 1.0};
  CHECK(surrogate_psi(0.0, sth) == 1.0);

  SurrogateSpec bad{SurrogateKind::arctan, 0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("surrogates are even, nonnegative; arctan strictly positive") {
  Rng rng(23);
  for (SurrogateKind kind :
       {SurrogateKind::arctan, SurrogateKind::triangular, SurrogateKind::scaled_tanh}) {
    SurrogateSpec spec{kind, 0.5 + rng.uniform() * 3.0, 1.0};
    for (int i = 0; i < 200; ++i) {
      const double u = rng.uniform(-6.0, 6.0);
      const double p = surrogate_psi(u, spec);
      CHECK(p >= 0.0);
      CHECK(p == surrogate_psi(-u, spec));
      if (kind == SurrogateKind::arctan) CHECK(p > 0.0);
    }
  }
  Tensor u({3}, {-1.0, 0.0, 1.0});
  Tensor psi = surrogate_derivative(u, SurrogateSpec{});
  CHECK(psi[0] == psi[2]);
  CHECK(psi[1] == 1.0);
}

TEST_CASE("smooth spike primitive is sigmoidal") {
  SurrogateSpec spec;
  CHECK(smooth_spike_phi(0.0, spec) == 0.5);
  CHECK(smooth_spike_phi(1e9, spec) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(smooth_spike_phi(-1e9, spec) == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("hard spike backward uses the surrogate") {
  SurrogateSpec spec;  // arctan, v_th = 1
  Tape t;
  NodeId v = t.leaf(Tensor({3}, {0.2, 1.0, 1.7}));
  NodeId s = t.spike(v, spec, false);
  CHECK(t.value(s)[0] == 0.0);
  CHECK(t.value(s)[1] == 1.0);  // fires exactly at threshold
  CHECK(t.value(s)[2] == 1.0);
  t.backward(t.sum(s));
  for (int i = 0; i < 3; ++i) {
    const double u = t.value(v)[i] - 1.0;
    CHECK(t.grad(v)[i] == surrogate_psi(u, spec));
  }
}

TEST_CASE("max_over_time routes gradient to first argmax") {
  Tape t;
  NodeId s0 = t.leaf(Tensor({2}, {1.0, 5.0}));
  NodeId s1 = t.leaf(Tensor({2}, {4.0, 5.0}));  // class 1 ties with s0
  NodeId s2 = t.leaf(Tensor({2}, {3.0, 3.0}));
  NodeId m = t.max_over_time({s0, s1, s2});
  CHECK(t.value(m)[0] == 4.0);
  CHECK(t.value(m)[1] == 5.0);
  t.backward(t.sum(m));
  // class 0 max at t=1, class 1 max first at t=0
  CHECK(t.grad(s0)[0] == 0.0);
  CHECK(t.grad(s0)[1] == 1.0);
  CHECK(t.grad(s1)[0] == 1.0);
  CHECK(t.grad(s1)[1] == 0.0);
  CHECK(t.grad(s2)[0] == 0.0);
  CHECK(t.grad(s2)[1] == 0.0);
  // gradient is a one-hot selection per class: sums to 1 per class
  for (int c = 0; c < 2; ++c)
    CHECK(t.grad(s0)[c] + t.grad(s1)[c] + t.grad(s2)[c] == 1.0);
}

TEST_CASE("cross entropy value and closed-form gradient") {
  Tape t;
  NodeId lg = t.leaf(Tensor({2}, {10.0, -10.0}));
  NodeId loss = t.cross_entropy(lg, 0);
  CHECK(t.value(loss)[0] == doctest::Approx(2.061e-9).epsilon(1e-3));
  t.backward(loss);
  Tensor p = softmax(t.value(lg));
  CHECK(std::abs(t.grad(lg)[0] - (p[0] - 1.0)) < 1e-10);
  CHECK(std::abs(t.grad(lg)[1] - p[1]) < 1e-10);

  Tape t2;
  NodeId eq = t2.leaf(Tensor::zeros({5}));
  CHECK(t2.value(t2.cross_entropy(eq, 3))[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK_THROWS_AS(t2.cross_entropy(eq, 5), data_error);
}

TEST_CASE("backward touches each node exactly once and is deterministic") {
  Rng rng(31);
  Tape t;
  NodeId a = t.leaf(random_tensor(rng, {4}));
  NodeId b = t.leaf(random_tensor(rng, {4}));
  NodeId c = t.mul(t.add(a, b), t.sigmoid(a));
  NodeId dead = t.tanh(b);  // not an ancestor of the loss
  (void)dead;
  NodeId loss = t.sum(c);
  t.backward(loss);
  CHECK(t.backward_visit_count() == t.size());
  Tensor g1 = t.grad(a);
  t.backward(loss);
  CHECK(t.backward_visit_count() == t.size());
  Tensor g2 = t.grad(a);
  for (std::int64_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

}  // TEST_SUITE
