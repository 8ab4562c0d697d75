#include <cmath>

#include "doctest.h"
#include "slack/nn.hpp"
#include "test_support.hpp"

using namespace slack;
using namespace slack::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop with circular columns") {
  Rng rng(5);
  Tensor x = random_tensor({2, 4, 6}, rng);
  Tensor w = random_tensor({3, 2, 4, 4}, rng);
  Tensor b = random_tensor({3}, rng);
  Graph g(false);
  const Tensor& y = g.value(conv2d(g, g.constant(x), g.constant(w), g.constant(b), 2, 1));
  REQUIRE(y.shape == std::vector<int>{3, 2, 3});
  for (int o = 0; o < 3; ++o) {
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 3; ++c) {
        double s = b[o];
        for (int ci = 0; ci < 2; ++ci) {
          for (int ki = 0; ki < 4; ++ki) {
            for (int kj = 0; kj < 4; ++kj) {
              const int rr = r * 2 - 1 + ki;
              const int cc = ((c * 2 - 1 + kj) % 6 + 6) % 6;
              if (rr < 0 || rr >= 4) continue;
              s += w[((o * 2 + ci) * 4 + ki) * 4 + kj] * x[(ci * 4 + rr) * 6 + cc];
            }
          }
        }
        CHECK(y[(o * 2 + r) * 3 + c] == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Rng rng(6);
  Tensor x = random_tensor({2, 4, 8}, rng);
  Tensor w = random_tensor({3, 2, 4, 4}, rng);
  Tensor y = random_tensor({3, 2, 4}, rng);
  Graph g(false);
  Tensor zero_b3({3}), zero_b2({2});
  const Tensor cx = g.value(conv2d(g, g.constant(x), g.constant(w), g.constant(zero_b3), 2, 1));
  // conv_transpose takes [C_in_of_transpose, C_out, k, k] = the conv weight as is.
  const Tensor ty =
      g.value(conv_transpose2d(g, g.constant(y), g.constant(w), g.constant(zero_b2), 2, 1));
  REQUIRE(ty.shape == x.shape);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("layer gradients match central differences") {
  Rng rng(7);
  ParamSet ps;
  ps.add("x", random_tensor({2, 4, 8}, rng));
  ps.add("cw", random_tensor({3, 2, 4, 4}, rng, -0.5, 0.5));
  ps.add("cb", random_tensor({3}, rng));
  ps.add("tw", random_tensor({3, 2, 4, 4}, rng, -0.5, 0.5));
  ps.add("tb", random_tensor({2}, rng));
  ps.add("aw", random_tensor({3, 3}, rng));
  ps.add("ab", random_tensor({3}, rng));
  ps.add("lw", random_tensor({5, 24}, rng, -0.3, 0.3));
  ps.add("lb", random_tensor({5}, rng));
  std::vector<double> target(64);
  std::vector<std::uint8_t> mask(64);
  for (std::size_t i = 0; i < 64; ++i) {
    target[i] = rng.uniform();
    mask[i] = rng.bernoulli(0.7);
  }
  auto loss = [&](ParamSet* grads) {
    Graph g;
    Var x = g.param(ps, "x", grads);
    Var h = leaky_relu(g, conv2d(g, x, g.param(ps, "cw", grads), g.param(ps, "cb", grads), 2, 1));
    Var gate = sigmoid(g, linear(g, global_avg_pool(g, h), g.param(ps, "aw", grads),
                                 g.param(ps, "ab", grads)));
    h = channel_gate(g, h, gate);
    Var z = linear(g, h, g.param(ps, "lw", grads), g.param(ps, "lb", grads));
    Var up = conv_transpose2d(g, h, g.param(ps, "tw", grads), g.param(ps, "tb", grads), 2, 1);
    Var rec = masked_mse(g, scale(g, sigmoid(g, up), 1.0), target, mask);
    Var d = dice_loss(g, sigmoid(g, up), target);
    Var zl = reshape(g, z, {5});
    Var zc = sub(g, concat(g, zl, scale(g, zl, 0.5)), g.constant(Tensor({10}, 0.2)));
    Var head = reshape(g, linear(g, zc, g.constant(Tensor({1, 10}, 0.1)), g.constant(Tensor({1}))),
                       {1});
    Var total = weighted_sum(g, {rec, d, head}, {1.0, 0.3, 0.2});
    if (grads) g.backward(total);
    return g.scalar(total);
  };
  const auto res = testing::check_gradients(ps, loss, 6, 11);
  CHECK(res.worst < 1e-4);
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(8);
  ParamSet ps;
  for (const char* n : {"a", "p", "n1", "n2", "q"}) ps.add(n, random_tensor({4}, rng));
  ps.add("prob", random_tensor({1}, rng, 0.2, 0.8));
  auto loss = [&](ParamSet* grads) {
    Graph g;
    Var a = g.param(ps, "a", grads), p = g.param(ps, "p", grads);
    Var n1 = g.param(ps, "n1", grads), n2 = g.param(ps, "n2", grads);
    Var q = g.param(ps, "q", grads);
    Var t = triplet_loss(g, a, p, n1, 4.0);
    Var np = npair_loss(g, a, p, {n1, n2});
    Var b1 = bce(g, g.param(ps, "prob", grads), 1.0);
    Var b0 = bce(g, g.param(ps, "prob", grads), 0.0);
    Var m = mmd(g, {a, p, q}, {n1, n2}, {0.7, 1.5});
    Var total = weighted_sum(g, {t, np, b1, b0, m}, {1.0, 1.0, 0.5, 0.5, 2.0});
    if (grads) g.backward(total);
    return g.scalar(total);
  };
  const auto res = testing::check_gradients(ps, loss, 4, 12);
  CHECK(res.worst < 1e-4);
}

TEST_CASE("weighted bce map gradient") {
  Rng rng(9);
  ParamSet ps;
  ps.add("logit", random_tensor({1, 3, 4}, rng, -2, 2));
  std::vector<double> labels(12), weights(12);
  std::vector<std::uint8_t> mask(12);
  for (int i = 0; i < 12; ++i) {
    labels[i] = rng.bernoulli(0.4);
    weights[i] = rng.uniform(0.5, 3.0);
    mask[i] = rng.bernoulli(0.8);
  }
  mask[0] = 1;
  auto loss = [&](ParamSet* grads) {
    Graph g;
    Var l = weighted_bce_map(g, sigmoid(g, g.param(ps, "logit", grads)), labels, weights, mask);
    if (grads) g.backward(l);
    return g.scalar(l);
  };
  CHECK(testing::check_gradients(ps, loss, 12, 13).worst < 1e-4);
}

TEST_CASE("bce clamps saturated probabilities") {
  Graph g(false);
  Var p = g.constant(Tensor({1}, 0.0));
  CHECK(g.scalar(bce(g, p, 1.0)) == doctest::Approx(-std::log(kProbClamp)));
  CHECK(std::isfinite(g.scalar(bce(g, g.constant(Tensor({1}, 1.0)), 0.0))));
}

TEST_CASE("masked_mse rejects an empty mask") {
  Graph g(false);
  Var p = g.constant(Tensor({2}, 1.0));
  CHECK_THROWS_AS(masked_mse(g, p, {0.0, 0.0}, {0, 0}), Error);
}

TEST_CASE("graph without gradients rejects backward") {
  Graph g(false);
  Var p = g.constant(Tensor({1}, 1.0));
  CHECK_THROWS(g.backward(p));
}

TEST_CASE("adam decreases a quadratic") {
  ParamSet ps;
  ps.add("w", Tensor({3}, std::vector<double>{3.0, -2.0, 1.0}));
  Adam opt(ps, {0.1, 0.9, 0.999, 1e-8, 0.0});
  ParamSet grads = ps.zeros_like();
  for (int it = 0; it < 300; ++it) {
    grads.set_zero();
    for (std::size_t i = 0; i < 3; ++i) grads.value(0)[i] = 2 * ps.value(0)[i];
    opt.step(ps, grads);
  }
  for (double v : ps.value(0).data) CHECK(std::abs(v) < 0.05);
}
