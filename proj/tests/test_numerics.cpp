#include <catch_amalgamated.hpp>

#include <cmath>

#include "bskim/numerics/adam.hpp"
#include "bskim/numerics/grad_check.hpp"
#include "bskim/numerics/ops.hpp"
#include "bskim/numerics/parameters.hpp"
#include "test_util.hpp"

using namespace bskim;
using bskim::testing::probe;
using bskim::testing::rand_tensor;
using Catch::Approx;

namespace {

constexpr double kSmooth = 1e-6;

double check(const ScalarFn& f, const Tensor& x) { return grad_check(f, x).max_rel_error; }

}  // namespace

TEST_CASE("tensor shape and data checks") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.reshape({4}), DimensionError);
  t.reshape({3, 2});
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.all_finite());
  t[0] = std::nan("");
  CHECK_FALSE(t.all_finite());
  t[0] = -INFINITY;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("graph backward requires a scalar root and accumulates into bound tensors") {
  Tensor w = rand_tensor({3}, 1);
  w.set_requires_grad(true);
  {
    Graph g;
    Var v = g.bind(w);
    CHECK_THROWS_AS(g.backward(v), DimensionError);
    g.backward(ops::sum(v));
  }
  {
    Graph g;
    g.backward(ops::sum(g.bind(w)));
  }
  for (double d : w.grad_view()) CHECK(d == 2.0);
}

TEST_CASE("non-finite op output raises a numeric error") {
  Graph g;
  Var x = g.constant(Tensor({2}, 1e300));
  CHECK_THROWS_AS(ops::mul(x, x), NumericError);
}

TEST_CASE("gradient of linear algebra ops") {
  const Tensor b = rand_tensor({4, 5}, 2);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::matmul(x, g.constant(b))); }, rand_tensor({3, 4}, 1)) < kSmooth);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::matmul(g.constant(b), x)); }, rand_tensor({5, 2}, 3)) < kSmooth);
  const Tensor c = rand_tensor({6, 4}, 4);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::matmul_nt(x, g.constant(c))); }, rand_tensor({3, 4}, 5)) <
        kSmooth);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::matmul_nt(g.constant(c), x)); }, rand_tensor({3, 4}, 6)) <
        kSmooth);
  const Tensor bb = rand_tensor({2, 4, 3}, 7);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::bmm(x, g.constant(bb))); }, rand_tensor({2, 5, 4}, 8)) <
        kSmooth);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::bmm(g.constant(rand_tensor({2, 5, 3}, 9)), x, true)); },
              rand_tensor({2, 4, 3}, 10)) < kSmooth);
  CHECK(check([&](Graph&, Var x) { return probe(ops::bmm(x, x, true)); }, rand_tensor({2, 3, 3}, 11)) < kSmooth);
}

TEST_CASE("matmul matches a direct triple loop") {
  const Tensor a = rand_tensor({3, 4}, 1), b = rand_tensor({4, 2}, 2);
  Graph g;
  const Tensor& c = ops::matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == Approx(s).margin(1e-14));
    }
  CHECK_THROWS_AS(ops::matmul(g.constant(a), g.constant(a)), DimensionError);
}

TEST_CASE("gradient of elementwise ops") {
  const Tensor other = rand_tensor({3, 4}, 20);
  auto x0 = rand_tensor({3, 4}, 21);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::add(x, g.constant(other))); }, x0) < kSmooth);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::sub(g.constant(other), x)); }, x0) < kSmooth);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::mul(x, g.constant(other))); }, x0) < kSmooth);
  CHECK(check([&](Graph&, Var x) { return probe(ops::mul(x, x)); }, x0) < kSmooth);
  CHECK(check([&](Graph&, Var x) { return probe(ops::scale(x, -2.5)); }, x0) < kSmooth);
  CHECK(check([&](Graph&, Var x) { return probe(ops::gelu(x)); }, x0) < kSmooth);
  CHECK(check([&](Graph& g, Var b) { return probe(ops::add_rowvec(g.constant(other), b)); }, rand_tensor({4}, 22)) <
        kSmooth);
  CHECK(check([&](Graph& g, Var x) { return probe(ops::add_rowvec(x, g.constant(rand_tensor({4}, 23)))); }, x0) <
        kSmooth);
  CHECK(check([](Graph&, Var x) { return ops::sum(x); }, x0) < kSmooth);
}

TEST_CASE("relu gradient away from the kink") {
  Tensor x = rand_tensor({4, 4}, 30);
  for (auto& v : x.values())
    if (std::abs(v) < 0.05) v = 0.3;
  CHECK(check([](Graph&, Var v) { return probe(ops::relu(v)); }, x) < 1e-3);
  Graph g;
  Var z = g.input(Tensor({1}, 0.0));
  g.backward(ops::sum(ops::relu(z)));
  CHECK(g.grad(z)[0] == 0.0);
}

TEST_CASE("gelu matches the tanh formula") {
  Graph g;
  const Tensor x({5}, std::vector<double>{-3.0, -0.5, 0.0, 0.7, 4.0});
  const Tensor& y = ops::gelu(g.constant(x)).value();
  for (std::size_t i = 0; i < 5; ++i) {
    const double v = x[i];
    const double ref = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
    CHECK(y[i] == Approx(ref).margin(1e-15));
  }
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Tensor x = rand_tensor({3, 5}, 40, 3.0);
  Graph g;
  const Tensor y = ops::softmax(g.constant(x)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += y.at(r, c);
    CHECK(s == Approx(1.0).margin(1e-14));
  }
  Tensor shifted = x;
  for (auto& v : shifted.values()) v += 1000.0;
  const Tensor y2 = ops::softmax(g.constant(shifted)).value();
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y2[i] == Approx(y[i]).margin(1e-12));
  CHECK(check([](Graph&, Var v) { return probe(ops::softmax(v)); }, x) < kSmooth);
  CHECK(check([](Graph&, Var v) { return probe(ops::softmax(v, 0)); }, rand_tensor({4, 3, 2}, 41)) < kSmooth);
  CHECK(check([](Graph&, Var v) { return probe(ops::softmax(v, 1)); }, rand_tensor({4, 3, 2}, 42)) < kSmooth);
}

TEST_CASE("cross entropy values and gradient") {
  Graph g;
  Var l = g.constant(Tensor({2, 2}, std::vector<double>{0.0, 0.0, 2.0, 0.0}));
  const Tensor ce = ops::cross_entropy(l, {0, 1}).value();
  CHECK(ce[0] == Approx(std::log(2.0)).margin(1e-15));
  CHECK(ce[1] == Approx(2.0 + std::log(1.0 + std::exp(-2.0))).margin(1e-14));
  CHECK_THROWS_AS(ops::cross_entropy(l, {0, 2}), IndexError);
  CHECK(check([](Graph&, Var v) { return probe(ops::cross_entropy(v, {1, 0, 3})); }, rand_tensor({3, 4}, 50)) <
        kSmooth);
}

TEST_CASE("layernorm normalizes rows and has correct gradients") {
  const Tensor gamma = rand_tensor({6}, 60), beta = rand_tensor({6}, 61);
  const Tensor x = rand_tensor({4, 6}, 62, 2.0);
  {
    Graph g;
    const Tensor y = ops::layernorm(g.constant(x), g.constant(Tensor({6}, 1.0)), g.constant(Tensor({6}))).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < 6; ++c) m += y.at(r, c) / 6.0;
      for (std::size_t c = 0; c < 6; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 6.0;
      CHECK(m == Approx(0.0).margin(1e-12));
      CHECK(v == Approx(1.0).margin(1e-10));
    }
  }
  CHECK(check([&](Graph& g, Var v) { return probe(ops::layernorm(v, g.constant(gamma), g.constant(beta))); }, x) <
        kSmooth);
  CHECK(check([&](Graph& g, Var v) { return probe(ops::layernorm(g.constant(x), v, g.constant(beta))); }, gamma) <
        kSmooth);
  CHECK(check([&](Graph& g, Var v) { return probe(ops::layernorm(g.constant(x), g.constant(gamma), v)); }, beta) <
        kSmooth);
}

TEST_CASE("batchnorm training statistics, running update and eval mode") {
  const Tensor x = rand_tensor({3, 2, 2, 2}, 70, 2.0);
  Tensor rm({2}), rv({2}, 1.0);
  Graph g;
  const Tensor y = ops::batchnorm(g.constant(x), g.constant(Tensor({2}, 1.0)), g.constant(Tensor({2})),
                                  {&rm, &rv}, true)
                       .value();
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0, xm = 0.0, xv = 0.0;
    std::vector<double> xs;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t s = 0; s < 4; ++s) {
        m += y[(b * 2 + c) * 4 + s] / 12.0;
        xs.push_back(x[(b * 2 + c) * 4 + s]);
      }
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t s = 0; s < 4; ++s) v += std::pow(y[(b * 2 + c) * 4 + s] - m, 2) / 12.0;
    for (double e : xs) xm += e / 12.0;
    for (double e : xs) xv += (e - xm) * (e - xm) / 12.0;
    CHECK(m == Approx(0.0).margin(1e-12));
    CHECK(v == Approx(xv / (xv + 1e-5)).margin(1e-10));
    CHECK(rm[c] == Approx(0.1 * xm).margin(1e-14));
    CHECK(rv[c] == Approx(0.9 + 0.1 * xv).margin(1e-14));
  }
  // Eval mode: (x - rm) / sqrt(rv + eps)
  const Tensor ye = ops::batchnorm(g.constant(x), g.constant(Tensor({2}, 1.0)), g.constant(Tensor({2})),
                                   {&rm, &rv}, false)
                        .value();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = (i / 4) % 2;
    CHECK(ye[i] == Approx((x[i] - rm[c]) / std::sqrt(rv[c] + 1e-5)).margin(1e-13));
  }
  const Tensor gamma = rand_tensor({2}, 71), beta = rand_tensor({2}, 72);
  auto bn = [&](bool train) {
    return [&, train](Graph& gg, Var v) {
      Tensor m2({2}), v2({2}, 1.0);
      return probe(ops::batchnorm(v, gg.constant(gamma), gg.constant(beta), {&m2, &v2}, train));
    };
  };
  CHECK(check(bn(true), x) < kSmooth);
  CHECK(check(bn(false), x) < kSmooth);
  CHECK(check([&](Graph& gg, Var v) {
          Tensor m2({2}), v2({2}, 1.0);
          return probe(ops::batchnorm(gg.constant(x), v, gg.constant(beta), {&m2, &v2}, true));
        },
              gamma) < kSmooth);
}

TEST_CASE("indexing and layout ops") {
  const Tensor table = rand_tensor({5, 3}, 80);
  CHECK(check([](Graph&, Var t) { return probe(ops::embedding(t, {4, 0, 4, 2})); }, table) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::transpose(t)); }, table) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::reshape(t, {3, 5})); }, table) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::swap_leading(t)); }, rand_tensor({2, 3, 4}, 81)) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::slice_rows(t, 1, 3)); }, table) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::concat_rows({t, ops::scale(t, 2.0)})); }, table) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::gather_rows(t, {3, 1, 1})); }, table) < kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::scatter_rows(t, {0, 2, 6, 7, 9}, 10, -3.0)); }, table) <
        kSmooth);
  CHECK(check([](Graph&, Var t) { return probe(ops::mask_keys(t, {true, false, true}, -3.0)); }, table) < kSmooth);

  Graph g;
  const Tensor sw = ops::swap_leading(g.constant(rand_tensor({2, 3, 4}, 82))).value();
  CHECK(sw.shape() == Shape{3, 2, 4});
  const Tensor sc = ops::scatter_rows(g.constant(table), {1, 4, 5, 6, 8}, 9, -7.0).value();
  CHECK(sc.at(0, 0) == -7.0);
  CHECK(sc.at(4, 2) == table.at(1, 2));
  CHECK_THROWS_AS(ops::gather_rows(g.constant(table), {5}), IndexError);
  CHECK_THROWS_AS(ops::embedding(g.constant(table), {5}), IndexError);
}

TEST_CASE("diagonal blocks extract the k x k self-attention squares") {
  const Tensor a = rand_tensor({2, 6, 6}, 90);
  Graph g;
  const Tensor d = ops::diagonal_blocks(g.constant(a), 2, {0, 2}).value();
  REQUIRE(d.shape() == Shape{2, 2, 2, 2});
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(d[((0 * 2 + h) * 2 + i) * 2 + j] == a.at(h, i, j));
        CHECK(d[((1 * 2 + h) * 2 + i) * 2 + j] == a.at(h, 4 + i, 4 + j));
      }
  CHECK(check([](Graph&, Var t) { return probe(ops::diagonal_blocks(t, 2, {2, 1})); }, a) < kSmooth);
  CHECK_THROWS_AS(ops::diagonal_blocks(g.constant(a), 2, {3}), IndexError);
}

TEST_CASE("conv2d against a hand computation") {
  // 1 channel 3x3 input, 2x2 kernel of ones, no padding -> sums of 2x2 windows
  Graph g;
  Tensor x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 2, 2}, 1.0);
  const Tensor y = ops::conv2d(g.constant(x), g.constant(w), g.constant(Tensor({1}, 0.5)), 0).value();
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y[0] == 12.5);
  CHECK(y[1] == 16.5);
  CHECK(y[2] == 24.5);
  CHECK(y[3] == 28.5);
  // Padding 1 with a centered 3x3 delta kernel is the identity.
  Tensor delta({1, 1, 3, 3});
  delta[4] = 1.0;
  const Tensor id = ops::conv2d(g.constant(x), g.constant(delta), g.constant(Tensor({1})), 1).value();
  for (std::size_t i = 0; i < 9; ++i) CHECK(id[i] == x[i]);
  CHECK_THROWS_AS(ops::conv2d(g.constant(Tensor({1, 1, 1, 1})), g.constant(Tensor({1, 1, 3, 3})),
                              g.constant(Tensor({1})), 0),
                  DimensionError);
}

TEST_CASE("conv2d matches a direct convolution and its gradients check") {
  const Tensor x = rand_tensor({2, 3, 5, 4}, 100), w = rand_tensor({4, 3, 3, 3}, 101), b = rand_tensor({4}, 102);
  Graph g;
  const Tensor y = ops::conv2d(g.constant(x), g.constant(w), g.constant(b), 1).value();
  REQUIRE(y.shape() == Shape{2, 4, 5, 4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t u = 0; u < 3; ++u)
              for (std::size_t v = 0; v < 3; ++v) {
                const long ii = static_cast<long>(i + u) - 1, jj = static_cast<long>(j + v) - 1;
                if (ii < 0 || jj < 0 || ii >= 5 || jj >= 4) continue;
                s += w[((o * 3 + c) * 3 + u) * 3 + v] * x[((n * 3 + c) * 5 + ii) * 4 + jj];
              }
          CHECK(y[((n * 4 + o) * 5 + i) * 4 + j] == Approx(s).margin(1e-12));
        }
  CHECK(check([&](Graph& gg, Var v) { return probe(ops::conv2d(v, gg.constant(w), gg.constant(b), 1)); }, x) <
        kSmooth);
  CHECK(check([&](Graph& gg, Var v) { return probe(ops::conv2d(gg.constant(x), v, gg.constant(b), 1)); }, w) <
        kSmooth);
  CHECK(check([&](Graph& gg, Var v) { return probe(ops::conv2d(gg.constant(x), gg.constant(w), v, 0)); }, b) <
        kSmooth);
}

TEST_CASE("average pooling") {
  Graph g;
  Tensor x({1, 1, 3, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  const Tensor y = ops::avg_pool_2x2(g.constant(x)).value();
  REQUIRE(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y[0] == Approx(3.5));
  CHECK(y[1] == Approx(5.5));
  CHECK_THROWS_AS(ops::avg_pool_2x2(g.constant(Tensor({1, 1, 1, 4}))), DimensionError);
  CHECK(check([](Graph&, Var v) { return probe(ops::avg_pool_2x2(v)); }, rand_tensor({2, 3, 5, 4}, 110)) < kSmooth);
}

TEST_CASE("parameter store names are unique") {
  ParameterStore s;
  s.add("a", Tensor({2}));
  CHECK_THROWS_AS(s.add("a", Tensor({1})), ConfigError);
  CHECK(s.find("a") != nullptr);
  CHECK(s.find("b") == nullptr);
  s.add("b", Tensor({3}), false);
  CHECK(s.trainable_count() == 2);
}

TEST_CASE("adam leaves parameters alone when all gradients are zero") {
  Tensor p = rand_tensor({5}, 120);
  p.set_requires_grad(true);
  p.grad();
  const Tensor before = p;
  Adam opt;
  std::vector<Tensor*> ps{&p};
  for (int i = 0; i < 3; ++i) opt.step(ps, 1e-2);
  CHECK(p == before);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  Tensor p({3}, std::vector<double>{1.0, 2.0, 3.0});
  p.set_requires_grad(true);
  auto& gr = p.grad();
  gr = {0.5, -2.0, 1e-3};
  Adam opt;
  std::vector<Tensor*> ps{&p};
  opt.step(ps, 0.1);
  CHECK(p[0] == Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == Approx(2.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  CHECK(p[2] == Approx(3.0 - 0.1 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("relative error floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 1e-9) == Approx(1e-3));
  CHECK(relative_error(2.0, 1.0) == Approx(0.5));
}
