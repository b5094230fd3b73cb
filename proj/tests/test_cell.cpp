#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hmlstm/cell.hpp"
#include "hmlstm/rng.hpp"

using namespace hmlstm;

namespace {

LayerParams make_params(int d, int d_above, int d_below, real_t fill, bool boundary_row) {
  const int rows = 4 * d + (boundary_row ? 1 : 0);
  LayerParams p;
  p.u_recurrent = Tensor::full({rows, d}, fill);
  if (d_above > 0) p.u_topdown = Tensor::full({rows, d_above}, fill);
  p.w_bottomup = Tensor::full({rows, d_below}, fill);
  p.bias = Tensor::zeros({rows});
  return p;
}

LayerParams random_params(int d, int d_above, int d_below, bool boundary_row, Rng& rng) {
  LayerParams p = make_params(d, d_above, d_below, 0, boundary_row);
  for (real_t& v : p.u_recurrent.data) v = rng.uniform(-0.7, 0.7);
  if (p.u_topdown)
    for (real_t& v : p.u_topdown->data) v = rng.uniform(-0.7, 0.7);
  for (real_t& v : p.w_bottomup.data) v = rng.uniform(-0.7, 0.7);
  for (real_t& v : p.bias.data) v = rng.uniform(-0.7, 0.7);
  return p;
}

Tensor random_vec(int n, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::zeros({n});
  for (real_t& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("compute_gates at zero parameters") {
  Rng rng(1);
  Tape t;
  LayerParams p = make_params(3, 2, 2, 0, true);
  LayerParamNodes pn = register_layer_params(t, p);
  NodeId h_prev = t.leaf(Tensor::zeros({3}));
  NodeId z_prev = t.leaf(Tensor::scalar(0));
  NodeId h_below = t.leaf(random_vec(2, rng));
  NodeId z_below = t.leaf(Tensor::scalar(1));
  NodeId h_above = t.leaf(Tensor::zeros({2}));

  GateBundle g = compute_gates(t, pn, h_prev, z_prev, h_below, z_below, h_above, 1.0);
  for (real_t v : t.val(g.f).data) CHECK(v == 0.5);
  for (real_t v : t.val(g.i).data) CHECK(v == 0.5);
  for (real_t v : t.val(g.o).data) CHECK(v == 0.5);
  for (real_t v : t.val(g.g).data) CHECK(v == 0.0);
  CHECK(t.val(g.z_tilde).data[0] == 0.5);
}

TEST_CASE("bottom-up term gated off by z_below equals zero input") {
  Rng rng(42);
  LayerParams p = random_params(4, 0, 3, true, rng);
  Tensor h_prev = random_vec(4, rng);
  Tensor h_below = random_vec(3, rng, -2, 2);

  Tape t1;
  LayerParamNodes pn1 = register_layer_params(t1, p);
  GateBundle a = compute_gates(t1, pn1, t1.leaf(h_prev), t1.leaf(Tensor::scalar(0)),
                               t1.leaf(h_below), t1.leaf(Tensor::scalar(0)), kNoNode, 1.0);

  Tape t2;
  LayerParamNodes pn2 = register_layer_params(t2, p);
  GateBundle b = compute_gates(t2, pn2, t2.leaf(h_prev), t2.leaf(Tensor::scalar(0)),
                               t2.leaf(Tensor::zeros({3})), t2.leaf(Tensor::scalar(1)), kNoNode, 1.0);

  for (int i = 0; i < 4; ++i) {
    CHECK(t1.val(a.f).data[i] == t2.val(b.f).data[i]);
    CHECK(t1.val(a.i).data[i] == t2.val(b.i).data[i]);
    CHECK(t1.val(a.o).data[i] == t2.val(b.o).data[i]);
    CHECK(t1.val(a.g).data[i] == t2.val(b.g).data[i]);
  }
  CHECK(t1.val(a.z_tilde).data[0] == t2.val(b.z_tilde).data[0]);
}

TEST_CASE("scalar hand evaluation of the gate stack") {
  // d=1, every matrix all-ones, bias 0: s = 0.2 + 1*0.3 + 1*0.1 = 0.6 per row
  Tape t;
  LayerParams p = make_params(1, 1, 1, 1, true);
  LayerParamNodes pn = register_layer_params(t, p);
  GateBundle g = compute_gates(t, pn, t.leaf(Tensor::vec({0.2})), t.leaf(Tensor::scalar(1)),
                               t.leaf(Tensor::vec({0.1})), t.leaf(Tensor::scalar(1)),
                               t.leaf(Tensor::vec({0.3})), 1.0);
  CHECK(t.val(g.f).data[0] == doctest::Approx(0.6456563062257954).epsilon(1e-14));
  CHECK(t.val(g.i).data[0] == doctest::Approx(0.6456563062257954).epsilon(1e-14));
  CHECK(t.val(g.o).data[0] == doctest::Approx(0.6456563062257954).epsilon(1e-14));
  CHECK(t.val(g.g).data[0] == doctest::Approx(0.5370495669980353).epsilon(1e-14));
  CHECK(t.val(g.z_tilde).data[0] == doctest::Approx(0.8).epsilon(1e-14));
}

TEST_CASE("compute_gates rejects a missing top-down input") {
  Tape t;
  LayerParams p = make_params(2, 2, 2, 0.5, true);
  LayerParamNodes pn = register_layer_params(t, p);
  NodeId h = t.leaf(Tensor::zeros({2}));
  NodeId z = t.leaf(Tensor::scalar(0));
  CHECK_THROWS_AS(compute_gates(t, pn, h, z, h, z, kNoNode, 1.0), std::invalid_argument);
}

TEST_CASE("binarize: step threshold is strict at 0.5") {
  Tape t;
  CHECK(t.val(binarize(t, t.leaf(Tensor::scalar(0.6)), BoundaryMode::step, nullptr)).data[0] == 1.0);
  CHECK(t.val(binarize(t, t.leaf(Tensor::scalar(0.5)), BoundaryMode::step, nullptr)).data[0] == 0.0);
  CHECK(t.val(binarize(t, t.leaf(Tensor::scalar(0.2)), BoundaryMode::step, nullptr)).data[0] == 0.0);
}

TEST_CASE("binarize: soft mode is the identity node") {
  Tape t;
  NodeId zt = t.leaf(Tensor::scalar(0.37));
  NodeId z = binarize(t, zt, BoundaryMode::soft, nullptr);
  CHECK(z == zt);
  CHECK(t.val(z).data[0] == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("binarize: degenerate Bernoulli draws") {
  Tape t;
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    CHECK(t.val(binarize(t, t.leaf(Tensor::scalar(0)), BoundaryMode::sample, &rng)).data[0] == 0.0);
    CHECK(t.val(binarize(t, t.leaf(Tensor::scalar(1)), BoundaryMode::sample, &rng)).data[0] == 1.0);
  }
}

TEST_CASE("binarize rejects out-of-range pre-activations") {
  Tape t;
  CHECK_THROWS_AS(binarize(t, t.leaf(Tensor::scalar(1.5)), BoundaryMode::step, nullptr),
                  std::runtime_error);
}

TEST_CASE("straight-through gradient: frozen values and locality") {
  CHECK(straight_through_grad(1, 0, 1) == 0.5);
  CHECK(straight_through_grad(1, 2, 1) == 0.0);
  CHECK(straight_through_grad(2, 0.1, 4) == 4.0);  // |0.1| < 1/4, 2 * 4/2

  // exactly zero at and beyond the kink
  CHECK(straight_through_grad(1, 1.0, 1) == 0.0);
  CHECK(straight_through_grad(1, -1.0, 1) == 0.0);
  CHECK(straight_through_grad(5, 0.25, 4) == 0.0);
}

TEST_CASE("tape composition hard_sigm + binarize reproduces straight_through_grad") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const double preact = rng.uniform(-2, 2);
    const double slope = rng.uniform(0.5, 5);
    const double upstream = rng.uniform(-3, 3);

    Tape t;
    NodeId pre = t.leaf(Tensor::scalar(preact));
    NodeId zt = activation(t, Act::hard_sigm, pre, slope);
    NodeId z = binarize(t, zt, BoundaryMode::step, nullptr);
    NodeId loss = scale_const(t, z, upstream);
    t.backward(loss);
    CHECK(t.grad(pre)[0] ==
          doctest::Approx(straight_through_grad(upstream, preact, slope)).epsilon(1e-14));
  }
}

TEST_CASE("COPY returns bit-identical state and skips everything") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    Tape t;
    LayerParams p = random_params(5, 3, 4, true, rng);
    LayerParamNodes pn = register_layer_params(t, p);
    LayerNodes prev{t.leaf(random_vec(5, rng, -4, 4)), t.leaf(random_vec(5, rng, -4, 4)),
                    t.leaf(Tensor::scalar(0))};
    NodeId h_below = t.leaf(random_vec(4, rng));
    NodeId z_below = t.leaf(Tensor::scalar(0));
    NodeId h_above = t.leaf(random_vec(3, rng));
    const std::size_t before = t.size();

    LayerNodes out =
        cell_step(t, pn, prev, h_below, z_below, h_above, BoundaryMode::step, 1.0, nullptr);
    CHECK(out.h == prev.h);  // the very same nodes: no leaky integration possible
    CHECK(out.c == prev.c);
    CHECK(out.z == prev.z);
    CHECK(t.size() == before);  // gate computation skipped entirely
  }
}

TEST_CASE("FLUSH output is invariant to the previous cell state") {
  Rng rng(78);
  LayerParams p = random_params(4, 0, 3, true, rng);
  Tensor h_prev = random_vec(4, rng);
  Tensor h_below = random_vec(3, rng);

  auto run_flush = [&](const Tensor& c_prev) {
    Tape t;
    LayerParamNodes pn = register_layer_params(t, p);
    LayerNodes prev{t.leaf(h_prev), t.leaf(c_prev), t.leaf(Tensor::scalar(1))};
    LayerNodes out = cell_step(t, pn, prev, t.leaf(h_below), t.leaf(Tensor::scalar(1)), kNoNode,
                               BoundaryMode::step, 1.0, nullptr);
    return std::make_pair(t.val(out.h), t.val(out.c));
  };

  auto [h1, c1] = run_flush(random_vec(4, rng, -5, 5));
  auto [h2, c2] = run_flush(random_vec(4, rng, -5, 5));
  for (int i = 0; i < 4; ++i) {
    CHECK(h1.data[i] == h2.data[i]);
    CHECK(c1.data[i] == c2.data[i]);
  }
}

TEST_CASE("FLUSH with zero parameters erases history to zero") {
  Tape t;
  LayerParams p = make_params(2, 0, 2, 0, true);
  LayerParamNodes pn = register_layer_params(t, p);
  LayerNodes prev{t.leaf(Tensor::vec({0.9, -0.4})), t.leaf(Tensor::vec({7, -7})),
                  t.leaf(Tensor::scalar(1))};
  LayerNodes out = cell_step(t, pn, prev, t.leaf(Tensor::vec({1, 1})), t.leaf(Tensor::scalar(1)),
                             kNoNode, BoundaryMode::step, 1.0, nullptr);
  CHECK(t.val(out.c).data[0] == 0.0);  // c = i.g = 0.5 * 0
  CHECK(t.val(out.c).data[1] == 0.0);
  CHECK(t.val(out.h).data[0] == 0.0);  // h = 0.5 * tanh(0)
  CHECK(t.val(out.h).data[1] == 0.0);
}

TEST_CASE("UPDATE branch, zero parameters: hand-evaluated halving") {
  Tape t;
  LayerParams p = make_params(2, 0, 2, 0, true);
  LayerParamNodes pn = register_layer_params(t, p);
  LayerNodes prev{t.leaf(Tensor::vec({0, 0})), t.leaf(Tensor::vec({2, -2})),
                  t.leaf(Tensor::scalar(0))};
  LayerNodes out = cell_step(t, pn, prev, t.leaf(Tensor::vec({0, 0})), t.leaf(Tensor::scalar(1)),
                             kNoNode, BoundaryMode::step, 1.0, nullptr);
  CHECK(t.val(out.c).data[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t.val(out.c).data[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(t.val(out.h).data[0] == doctest::Approx(0.3807970779778824).epsilon(1e-14));
  CHECK(t.val(out.h).data[1] == doctest::Approx(-0.3807970779778824).epsilon(1e-14));
}

TEST_CASE("soft-mode cell_step with binary z equals hard mode to the last bit") {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    LayerParams p = random_params(4, 2, 3, true, rng);
    Tensor h_prev = random_vec(4, rng);
    Tensor c_prev = random_vec(4, rng, -3, 3);
    Tensor h_below = random_vec(3, rng);
    Tensor h_above = random_vec(2, rng);
    const double zp = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double zb = rng.bernoulli(0.5) ? 1.0 : 0.0;

    auto run = [&](BoundaryMode mode) {
      Tape t;
      LayerParamNodes pn = register_layer_params(t, p);
      LayerNodes prev{t.leaf(h_prev), t.leaf(c_prev), t.leaf(Tensor::scalar(zp))};
      LayerNodes out = cell_step(t, pn, prev, t.leaf(h_below), t.leaf(Tensor::scalar(zb)),
                                 t.leaf(h_above), mode, 1.0, nullptr);
      return std::make_pair(t.val(out.h), t.val(out.c));
    };

    auto [hh, hc] = run(BoundaryMode::step);
    auto [sh, sc] = run(BoundaryMode::soft);
    CHECK(std::memcmp(hh.data.data(), sh.data.data(), sizeof(real_t) * 4) == 0);
    CHECK(std::memcmp(hc.data.data(), sc.data.data(), sizeof(real_t) * 4) == 0);
  }
}

TEST_CASE("hard modes reject non-binary boundary inputs") {
  Tape t;
  LayerParams p = make_params(2, 0, 2, 0.1, true);
  LayerParamNodes pn = register_layer_params(t, p);
  LayerNodes prev{t.leaf(Tensor::zeros({2})), t.leaf(Tensor::zeros({2})),
                  t.leaf(Tensor::scalar(0.3))};
  CHECK_THROWS_AS(cell_step(t, pn, prev, t.leaf(Tensor::zeros({2})), t.leaf(Tensor::scalar(1)),
                            kNoNode, BoundaryMode::step, 1.0, nullptr),
                  std::invalid_argument);
}

TEST_CASE("boundary gradients stay live through the gating products") {
  // With z_prev = 1 the top-down product is in play, and even at z_prev = 0
  // the recorded product keeps the straight-through path alive.
  Rng rng(321);
  for (double preact : {0.1, -0.1}) {
    Tape t;
    LayerParams p = random_params(3, 2, 2, true, rng);
    LayerParamNodes pn = register_layer_params(t, p);

    NodeId pre = t.leaf(Tensor::scalar(preact));  // inside the linear region
    NodeId zt = activation(t, Act::hard_sigm, pre, 1.0);
    NodeId z_prev = binarize(t, zt, BoundaryMode::step, nullptr);
    CHECK(t.val(z_prev).data[0] == (preact > 0 ? 1.0 : 0.0));

    LayerNodes prev{t.leaf(random_vec(3, rng)), t.leaf(random_vec(3, rng)), z_prev};
    LayerNodes out = cell_step(t, pn, prev, t.leaf(random_vec(2, rng)), t.leaf(Tensor::scalar(1)),
                               t.leaf(random_vec(2, rng)), BoundaryMode::step, 1.0, nullptr);
    t.backward(sum(t, out.h));
    CHECK(t.grad(pre)[0] != 0.0);
  }
}
