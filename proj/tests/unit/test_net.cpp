#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mesa/errors.hpp"
#include "mesa/net.hpp"
#include "mesa/rng.hpp"

using namespace mesa;
using namespace mesa::net;

namespace {

Batch random_batch(std::size_t n, std::size_t in_dim, std::size_t out_dim, Rng& rng,
                   double target_lo = -1.0, double target_hi = 1.0) {
  Batch b;
  b.n = n;
  b.in_dim = in_dim;
  b.out_dim = out_dim;
  b.inputs.resize(n * in_dim);
  b.targets.resize(n * out_dim);
  for (double& x : b.inputs) x = rng.uniform(-1.0, 1.0);
  for (double& y : b.targets) y = rng.uniform(target_lo, target_hi);
  return b;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central differences are unreliable when a relu pre-activation sits within
// the probe step of its kink; regenerate fixtures until all hidden units
// clear a margin.
bool kink_free(const ParameterSet& params, Head head, const Batch& batch, double margin) {
  for (std::size_t i = 0; i < batch.n; ++i) {
    EvalTrace trace;
    std::span<const double> x(batch.inputs.data() + i * batch.in_dim, batch.in_dim);
    forward_trace(params, head, x, trace);
    for (std::size_t l = 0; l + 1 < params.shapes().size(); ++l)
      for (double pre : trace.ws.pre[l])
        if (std::abs(pre) < margin) return false;
  }
  return true;
}

// Central-difference gradient of the mse loss, one coordinate at a time.
Gradient fd_gradient(const ParameterSet& params, Head head, const Batch& batch,
                     double h = 1e-5) {
  Gradient g(params.shapes());
  ParameterSet probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double saved = probe.data()[i];
    probe.data()[i] = saved + h;
    double up = mse_loss(probe, head, batch);
    probe.data()[i] = saved - h;
    double down = mse_loss(probe, head, batch);
    probe.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("backward matches central finite differences across heads") {
  Rng rng(2024);
  const Head heads[] = {Head::identity, Head::sigmoid, Head::tanh};
  for (Head head : heads) {
    for (int trial = 0; trial < 8; ++trial) {
      auto shapes = ParameterSet::mlp_shapes(3, {5, 4}, 2);
      ParameterSet params = ParameterSet::random_init(shapes, rng);
      Batch batch = random_batch(6, 3, 2, rng, head == Head::sigmoid ? 0.1 : -0.9,
                                 head == Head::sigmoid ? 0.9 : 0.9);
      while (!kink_free(params, head, batch, 1e-3)) {
        params = ParameterSet::random_init(shapes, rng);
        batch = random_batch(6, 3, 2, rng, head == Head::sigmoid ? 0.1 : -0.9,
                             head == Head::sigmoid ? 0.9 : 0.9);
      }
      Gradient g(shapes);
      mse_backward(params, head, batch, g);
      Gradient fd = fd_gradient(params, head, batch);
      double worst = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i)
        worst = std::max(worst, rel_err(g.data()[i], fd.data()[i]));
      CHECK(worst <= 1e-4);
    }
  }
}

TEST_CASE("input gradients from backward_trace match finite differences") {
  Rng rng(7);
  auto shapes = ParameterSet::mlp_shapes(4, {6}, 3);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  std::vector<double> x = {0.3, -0.2, 0.8, -0.6};
  std::vector<double> seed = {0.5, -1.0, 0.25};

  EvalTrace trace;
  forward_trace(params, Head::identity, x, trace);
  std::vector<double> dx = backward_trace(params, Head::identity, trace, seed, nullptr);

  const double h = 1e-6;
  for (std::size_t j = 0; j < x.size(); ++j) {
    auto probe = x;
    probe[j] = x[j] + h;
    auto up = forward(params, Head::identity, probe);
    probe[j] = x[j] - h;
    auto down = forward(params, Head::identity, probe);
    double fd = 0.0;
    for (std::size_t k = 0; k < seed.size(); ++k) fd += seed[k] * (up[k] - down[k]) / (2.0 * h);
    CHECK(rel_err(dx[j], fd) <= 1e-4);
  }
}

TEST_CASE("scalar quadratic meta-gradient matches the closed form") {
  // One bias-free 1x1 layer, input 1, identity head: loss (w - mu)^2. The
  // adapted loss d/dw of (w - 2*a*(w - mu) - mu)^2 is 2*(1-2a)^2*(w - mu).
  auto shapes = std::vector<LayerShape>{{1, 1, false}};
  const double w = 1.0, mu = 3.0, alpha = 0.1;
  ParameterSet params(shapes);
  params.data()[0] = w;

  Batch b;
  b.n = 1;
  b.in_dim = 1;
  b.out_dim = 1;
  b.inputs = {1.0};
  b.targets = {mu};

  for (MetaMode mode : {MetaMode::exact, MetaMode::first_order}) {
    Gradient g = meta_gradient(params, Head::identity, b, b, alpha, mode);
    double expected = mode == MetaMode::exact ? 2.0 * (1.0 - 2.0 * alpha) * (1.0 - 2.0 * alpha) * (w - mu)
                                              : 2.0 * (1.0 - 2.0 * alpha) * (w - mu);
    CHECK(g.data()[0] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("meta-gradient with zero inner lr equals the plain outer gradient") {
  Rng rng(11);
  auto shapes = ParameterSet::mlp_shapes(2, {4}, 1);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  Batch inner = random_batch(5, 2, 1, rng);
  Batch outer = random_batch(5, 2, 1, rng);
  Gradient plain(shapes);
  mse_backward(params, Head::identity, outer, plain);
  for (MetaMode mode : {MetaMode::exact, MetaMode::first_order}) {
    Gradient g = meta_gradient(params, Head::identity, inner, outer, 0.0, mode);
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("exact meta-gradient matches finite differences of the adapted objective") {
  Rng rng(31);
  // under 10 parameters: 1 -> 2 -> 1 identity head (7 params).
  auto shapes = ParameterSet::mlp_shapes(1, {2}, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const double alpha = 0.05;
    ParameterSet params = ParameterSet::random_init(shapes, rng);
    Batch inner = random_batch(4, 1, 1, rng);
    Batch outer = random_batch(4, 1, 1, rng);
    while (!kink_free(params, Head::identity, inner, 1e-3) ||
           !kink_free(params, Head::identity, outer, 1e-3) ||
           !kink_free(inner_adapted(params, Head::identity, inner, alpha), Head::identity,
                      outer, 1e-3)) {
      params = ParameterSet::random_init(shapes, rng);
      inner = random_batch(4, 1, 1, rng);
      outer = random_batch(4, 1, 1, rng);
    }
    Gradient g = meta_gradient(params, Head::identity, inner, outer, alpha, MetaMode::exact);

    const double h = 1e-5;
    ParameterSet probe = params;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      double saved = probe.data()[i];
      probe.data()[i] = saved + h;
      double up = mse_loss(inner_adapted(probe, Head::identity, inner, alpha), Head::identity, outer);
      probe.data()[i] = saved - h;
      double down = mse_loss(inner_adapted(probe, Head::identity, inner, alpha), Head::identity, outer);
      probe.data()[i] = saved;
      worst = std::max(worst, rel_err(g.data()[i], (up - down) / (2.0 * h)));
    }
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("hvp matches finite differences of the gradient") {
  Rng rng(47);
  auto shapes = ParameterSet::mlp_shapes(2, {3}, 1);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  Batch batch = random_batch(6, 2, 1, rng);
  while (!kink_free(params, Head::sigmoid, batch, 1e-3)) {
    params = ParameterSet::random_init(shapes, rng);
    batch = random_batch(6, 2, 1, rng);
  }
  Gradient dir(shapes);
  for (std::size_t i = 0; i < dir.size(); ++i) dir.data()[i] = rng.uniform(-1.0, 1.0);

  Gradient hv = hvp_mse(params, Head::sigmoid, batch, dir);

  const double h = 1e-6;
  ParameterSet up = params, down = params;
  up.axpy(h, dir);
  down.axpy(-h, dir);
  Gradient gu(shapes), gd(shapes);
  mse_backward(up, Head::sigmoid, batch, gu);
  mse_backward(down, Head::sigmoid, batch, gd);
  for (std::size_t i = 0; i < hv.size(); ++i) {
    double fd = (gu.data()[i] - gd.data()[i]) / (2.0 * h);
    CHECK(rel_err(hv.data()[i], fd) <= 1e-3);
  }
}

TEST_CASE("adam leaves parameters unchanged on zero gradient with zero moments") {
  Rng rng(3);
  auto shapes = ParameterSet::mlp_shapes(2, {3}, 1);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  ParameterSet before = params;
  AdamState st = AdamState::make(params, 1e-3);
  Gradient zero(shapes);
  adam_step(params, zero, st);
  CHECK(params == before);
}

TEST_CASE("adam drives a quadratic to its minimum") {
  // Single bias-free weight, loss (w - 3)^2 via input 1 / target 3.
  auto shapes = std::vector<LayerShape>{{1, 1, false}};
  ParameterSet params(shapes);
  params.data()[0] = -2.0;
  Batch b;
  b.n = 1;
  b.in_dim = b.out_dim = 1;
  b.inputs = {1.0};
  b.targets = {3.0};
  AdamState st = AdamState::make(params, 0.05);
  Gradient g(shapes);
  for (int i = 0; i < 2000; ++i) {
    mse_backward(params, Head::identity, b, g);
    adam_step(params, g, st);
  }
  CHECK(params.data()[0] == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("gradient descent via inner_adapted reduces the loss") {
  Rng rng(8);
  auto shapes = ParameterSet::mlp_shapes(3, {8}, 2);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  Batch batch = random_batch(16, 3, 2, rng);
  double before = mse_loss(params, Head::identity, batch);
  ParameterSet stepped = inner_adapted(params, Head::identity, batch, 0.05);
  double after = mse_loss(stepped, Head::identity, batch);
  CHECK(after < before);
}

TEST_CASE("polyak update is the stated convex combination") {
  auto shapes = std::vector<LayerShape>{{2, 2}};
  ParameterSet target(shapes), online(shapes);
  target.fill(1.0);
  online.fill(5.0);
  polyak_update(target, online, 0.25);
  for (double x : target.flat()) CHECK(x == doctest::Approx(2.0));
  polyak_update(target, online, 1.0);
  for (double x : target.flat()) CHECK(x == doctest::Approx(5.0));
}

TEST_CASE("random_init respects the fan-in bound and zero biases") {
  Rng rng(21);
  auto shapes = ParameterSet::mlp_shapes(4, {16}, 2);
  ParameterSet p = ParameterSet::random_init(shapes, rng);
  // layer 0: 16x4 weights bounded by 1/2.
  const double* w = p.data();
  for (std::size_t i = 0; i < 16 * 4; ++i) CHECK(std::abs(w[i]) <= 0.5);
  for (std::size_t i = 16 * 4; i < 16 * 4 + 16; ++i) CHECK(w[i] == 0.0);
}

TEST_CASE("shape violations are rejected") {
  CHECK_THROWS_AS(ParameterSet(std::vector<LayerShape>{{3, 2}, {4, 5}}), ShapeError);
  Rng rng(1);
  auto shapes = ParameterSet::mlp_shapes(2, {3}, 1);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  std::vector<double> bad_input = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(forward(params, Head::identity, bad_input), ShapeError);
  Batch b = random_batch(4, 3, 1, rng);
  CHECK_THROWS_AS(mse_loss(params, Head::identity, b), ShapeError);
}

TEST_CASE("non-finite loss raises a numeric error carrying the batch index") {
  Rng rng(1);
  auto shapes = ParameterSet::mlp_shapes(2, {3}, 1);
  ParameterSet params = ParameterSet::random_init(shapes, rng);
  Batch b = random_batch(5, 2, 1, rng);
  b.targets[3] = std::numeric_limits<double>::infinity();
  try {
    mse_loss(params, Head::identity, b);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.batch_index == 3);
  }
}

TEST_CASE("untrained sigmoid head stays near one half") {
  Rng rng(12);
  auto shapes = ParameterSet::mlp_shapes(2, {32, 32}, 1);
  ParameterSet p = ParameterSet::random_init(shapes, rng);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x = {rng.uniform(), rng.uniform()};
    double y = forward(p, Head::sigmoid, x)[0];
    lo = std::min(lo, y);
    hi = std::max(hi, y);
    sum += y;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.2));
  CHECK(lo > 0.1);
  CHECK(hi < 0.9);
}
