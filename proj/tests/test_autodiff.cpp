#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "metafas/autodiff.hpp"
#include "metafas/ops.hpp"

using namespace metafas;

namespace {

// Relative comparison with an absolute floor, the tolerance scheme used for
// all gradient checks in this project.
void check_close(double got, double want, double rel, double abs_floor) {
  const double tol = std::max(abs_floor, rel * std::max(std::fabs(got), std::fabs(want)));
  CHECK(std::fabs(got - want) <= tol);
}

void check_grads_close(const std::vector<Tensor>& got, const std::vector<Tensor>& want,
                       double rel = 1e-4, double abs_floor = 1e-6) {
  REQUIRE(got.size() == want.size());
  for (size_t t = 0; t < got.size(); ++t) {
    REQUIRE(got[t].shape() == want[t].shape());
    for (int64_t i = 0; i < got[t].size(); ++i) {
      check_close(got[t].values()[i], want[t].values()[i], rel, abs_floor);
    }
  }
}

// Checks grad() against central differences for a scalar-valued expression.
void gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& expr,
               const std::vector<Tensor>& wrt, double rel = 1e-4,
               double abs_floor = 1e-6, double eps = 1e-5) {
  Tensor loss = expr(wrt);
  auto analytic = grad(loss, wrt);
  auto numeric = finite_difference_gradient(
      [&](const std::vector<Tensor>& args) { return expr(args).item(); }, wrt, eps);
  check_grads_close(analytic, numeric, rel, abs_floor);
}

std::vector<Tensor> leaf(std::initializer_list<Tensor> ts) {
  std::vector<Tensor> out;
  for (Tensor t : ts) out.push_back(t.set_requires_grad(true));
  return out;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
  Tensor t = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(t.size() == 4);
  CHECK(t.shape() == Shape{2, 2});
  CHECK_FALSE(t.requires_grad());

  CHECK_THROWS_AS(Tensor::from_values({2, 3}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::scalar(1.0).item() + Tensor::zeros({2}).item(), ShapeError);

  // requires_grad is a leaf property only
  Tensor a = Tensor::scalar(2.0).set_requires_grad(true);
  Tensor y = square(a);
  CHECK(y.requires_grad());
  CHECK_THROWS_AS(y.set_requires_grad(false), AutodiffError);

  // no grad accumulation without requires_grad: op output is a constant
  Tensor c = Tensor::scalar(2.0);
  CHECK_FALSE(square(c).requires_grad());
}

TEST_CASE("mean of a 2x2 tensor") {
  Tensor t = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(mean(t).item() == doctest::Approx(2.5));
}

TEST_CASE("concat along channel axis") {
  Tensor a = Tensor::zeros({4, 4, 8});
  Tensor b = Tensor::ones({4, 4, 16});
  Tensor c = concat({a, b}, 2);
  CHECK(c.shape() == Shape{4, 4, 24});
  // first 8 channels zero, rest one
  CHECK(c.values()[0] == 0.0);
  CHECK(c.values()[8] == 1.0);
}

TEST_CASE("conv2d of zero input is zero") {
  std::mt19937_64 rng(7);
  Tensor x = Tensor::zeros({1, 5, 5, 2});
  Tensor k = randn({3, 3, 2, 4}, rng);
  Tensor y = conv2d(x, k, 1);
  CHECK(y.shape() == Shape{1, 5, 5, 4});
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("shape errors name the primitive and dimensions") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(concat({a, Tensor::zeros({2, 4})}, 0), ShapeError);
  CHECK_THROWS_AS(max_pool2d(Tensor::zeros({1, 5, 5, 1}), 2), ShapeError);
}

TEST_CASE("grad: d(theta^2)/dtheta = 2 theta") {
  Tensor theta = Tensor::scalar(3.0).set_requires_grad(true);
  Tensor loss = square(theta);
  auto g = grad(loss, {theta});
  CHECK(g[0].item() == doctest::Approx(6.0));
}

TEST_CASE("grad: squared residual at theta=0") {
  // loss = (theta*x - y)^2 with x=1, y=2 -> d/dtheta = 2(theta x - y) x = -4
  Tensor theta = Tensor::scalar(0.0).set_requires_grad(true);
  Tensor x = Tensor::scalar(1.0);
  Tensor y = Tensor::scalar(2.0);
  Tensor loss = square(sub(mul(theta, x), y));
  auto g = grad(loss, {theta});
  CHECK(g[0].item() == doctest::Approx(-4.0));
}

TEST_CASE("second order: d^2(theta^3)/dtheta^2 = 6 theta") {
  Tensor theta = Tensor::scalar(2.0).set_requires_grad(true);
  Tensor loss = mul(mul(theta, theta), theta);
  auto g = grad(loss, {theta}, {.create_graph = true});
  CHECK(g[0].item() == doctest::Approx(12.0));  // 3 theta^2
  auto gg = grad(g[0], {theta});
  CHECK(gg[0].item() == doctest::Approx(12.0));  // 6 theta
}

TEST_CASE("grad detects non-scalar loss and detached targets") {
  Tensor theta = Tensor::scalar(1.0).set_requires_grad(true);
  Tensor other = Tensor::scalar(1.0).set_requires_grad(true);
  Tensor loss = square(theta);
  CHECK_THROWS_AS(grad(Tensor::ones({2}), {theta}), AutodiffError);
  CHECK_THROWS_AS(grad(loss, {other}), AutodiffError);
  auto z = grad(loss, {other}, {.zero_for_unreachable = true});
  CHECK(z[0].item() == 0.0);
}

TEST_CASE("finite differences: quadratic and constant") {
  Tensor theta = Tensor::scalar(3.0);
  auto quad = [](const std::vector<Tensor>& w) { return w[0].item() * w[0].item(); };
  auto g = finite_difference_gradient(quad, {theta}, 1e-4);
  CHECK(std::fabs(g[0].item() - 6.0) < 1e-6);

  auto constant = [](const std::vector<Tensor>&) { return 41.5; };
  auto gc = finite_difference_gradient(constant, {theta}, 1e-4);
  CHECK(gc[0].item() == 0.0);

  CHECK_THROWS_AS(finite_difference_gradient(quad, {theta}, 0.0), ValueError);
  auto bad = [](const std::vector<Tensor>&) { return std::nan(""); };
  CHECK_THROWS_AS(finite_difference_gradient(bad, {theta}, 1e-4), ValueError);
}

TEST_CASE("gradcheck: elementwise primitives") {
  std::mt19937_64 rng(11);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({3, 4}, rng);

  gradcheck([](const std::vector<Tensor>& w) { return sum(add(w[0], w[1])); }, leaf({a, b}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(sub(w[0], w[1])); }, leaf({a, b}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(mul(w[0], w[1])); }, leaf({a, b}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(square(w[0])); }, leaf({a}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(neg(w[0])); }, leaf({a}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(relu(w[0])); }, leaf({a}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(scale(w[0], -1.7)); }, leaf({a}));
  gradcheck([](const std::vector<Tensor>& w) { return mean(exp(w[0])); }, leaf({a}));
  gradcheck([](const std::vector<Tensor>& w) { return mean(sigmoid(w[0])); }, leaf({a}));

  Tensor pos = rand_uniform({3, 4}, rng, 0.5, 2.0);
  gradcheck([](const std::vector<Tensor>& w) { return sum(log(w[0])); }, leaf({pos}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(reciprocal(w[0])); }, leaf({pos}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(div(w[0], w[1])); },
            leaf({a, pos}));
}

TEST_CASE("gradcheck: scalar_mul carries gradient to both operands") {
  std::mt19937_64 rng(13);
  Tensor s = randn({}, rng);
  Tensor x = randn({2, 3}, rng);
  gradcheck([](const std::vector<Tensor>& w) { return sum(square(scalar_mul(w[0], w[1]))); },
            leaf({s, x}));
}

TEST_CASE("gradcheck: matmul, transpose, reshape") {
  std::mt19937_64 rng(17);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({4, 2}, rng);
  gradcheck([](const std::vector<Tensor>& w) { return sum(square(matmul(w[0], w[1]))); },
            leaf({a, b}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(square(transpose(w[0]))); },
            leaf({a}));
  gradcheck([](const std::vector<Tensor>& w) {
    return sum(square(reshape(w[0], {2, 6})));
  }, leaf({a}));
}

TEST_CASE("gradcheck: conv2d wrt input and kernel") {
  std::mt19937_64 rng(19);
  Tensor x = randn({2, 5, 5, 3}, rng);
  Tensor k = randn({3, 3, 3, 4}, rng);
  for (int padding : {0, 1, 2}) {
    gradcheck([padding](const std::vector<Tensor>& w) {
      return sum(square(conv2d(w[0], w[1], padding)));
    }, leaf({x, k}), 1e-4, 1e-6, 1e-5);
  }
}

TEST_CASE("gradcheck: pooling, concat, slice, pad") {
  std::mt19937_64 rng(23);
  Tensor x = randn({2, 4, 4, 3}, rng);
  gradcheck([](const std::vector<Tensor>& w) { return sum(square(max_pool2d(w[0], 2))); },
            leaf({x}));
  gradcheck([](const std::vector<Tensor>& w) { return sum(square(avg_pool2d(w[0], 2))); },
            leaf({x}));

  Tensor y = randn({2, 4, 4, 2}, rng);
  gradcheck([](const std::vector<Tensor>& w) {
    return sum(square(concat({w[0], w[1]}, 3)));
  }, leaf({x, y}));
  gradcheck([](const std::vector<Tensor>& w) {
    return sum(square(slice(w[0], 1, 1, 2)));
  }, leaf({x}));
  gradcheck([](const std::vector<Tensor>& w) {
    return sum(square(pad_axis(w[0], 2, 1, 2)));
  }, leaf({x}));
}

TEST_CASE("gradcheck: channel broadcast pair") {
  std::mt19937_64 rng(29);
  Tensor v = randn({3}, rng);
  Tensor x = randn({2, 4, 4, 3}, rng);
  gradcheck([](const std::vector<Tensor>& w) {
    return sum(square(broadcast_to_last_axis(w[0], {2, 4, 4, 3})));
  }, leaf({v}));
  gradcheck([](const std::vector<Tensor>& w) {
    return sum(square(sum_to_last_axis(w[0])));
  }, leaf({x}));
  // bias-add composite
  gradcheck([](const std::vector<Tensor>& w) {
    return mean(square(add(w[1], broadcast_to_last_axis(w[0], w[1].shape()))));
  }, leaf({v, x}));
}

TEST_CASE("two-layer perceptron matches finite differences") {
  std::mt19937_64 rng(31);
  Tensor w1 = randn({4, 6}, rng, 0.5);
  Tensor b1 = randn({6}, rng, 0.1);
  Tensor w2 = randn({6, 1}, rng, 0.5);
  Tensor b2 = randn({1}, rng, 0.1);
  Tensor x = randn({5, 4}, rng);
  Tensor y = randn({5, 1}, rng);

  auto net = [x, y](const std::vector<Tensor>& w) {
    Tensor h = relu(add(matmul(x, w[0]), broadcast_to_last_axis(w[1], {5, 6})));
    Tensor out = add(matmul(h, w[2]), broadcast_to_last_axis(w[3], {5, 1}));
    return mean(square(sub(out, y)));
  };
  gradcheck(net, leaf({w1, b1, w2, b2}), 1e-4, 1e-6);
}

TEST_CASE("create_graph: gradient of a gradient matches FD of gradients") {
  std::mt19937_64 rng(37);
  Tensor w = randn({4}, rng);
  Tensor x = randn({4}, rng);
  w.set_requires_grad(true);

  // f(w) = sum((w * x)^2) + sum(w^3-ish nonlinearity via mul chains)
  auto f = [&x](const Tensor& ww) {
    Tensor wx = mul(ww, x);
    return add(sum(square(wx)), sum(mul(mul(ww, ww), ww)));
  };

  Tensor loss = f(w);
  auto g1 = grad(loss, {w}, {.create_graph = true});
  // d(sum of first-order grads)/dw, checked against finite differences of grad()
  Tensor probe = sum(g1[0]);
  auto g2 = grad(probe, {w});

  auto fd = finite_difference_gradient(
      [&](const std::vector<Tensor>& args) {
        Tensor wt = args[0];
        Tensor l = f(wt);
        auto g = grad(l, {wt});
        double acc = 0.0;
        for (double v : g[0].values()) acc += v;
        return acc;
      },
      {w}, 1e-5);
  check_grads_close(g2, fd, 1e-3, 1e-6);
}

TEST_CASE("create_graph: second order through conv and pooling") {
  std::mt19937_64 rng(41);
  Tensor x = randn({1, 4, 4, 2}, rng);
  Tensor k = randn({3, 3, 2, 2}, rng, 0.5);
  k.set_requires_grad(true);

  auto f = [&x](const Tensor& kk) {
    Tensor h = relu(conv2d(x, kk, 1));
    Tensor p = avg_pool2d(h, 2);
    return sum(square(p));
  };

  Tensor loss = f(k);
  auto g1 = grad(loss, {k}, {.create_graph = true});
  Tensor probe = sum(g1[0]);
  auto g2 = grad(probe, {k});

  auto fd = finite_difference_gradient(
      [&](const std::vector<Tensor>& args) {
        Tensor kt = args[0];
        Tensor l = f(kt);
        auto g = grad(l, {kt});
        double acc = 0.0;
        for (double v : g[0].values()) acc += v;
        return acc;
      },
      {k}, 1e-5);
  check_grads_close(g2, fd, 1e-3, 1e-6);
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  std::mt19937_64 rng(43);
  Tensor x = randn({2, 6, 6, 3}, rng);
  Tensor k = randn({3, 3, 3, 5}, rng);
  Tensor y1 = sum(square(max_pool2d(relu(conv2d(x, k, 1)), 2)));
  Tensor y2 = sum(square(max_pool2d(relu(conv2d(x, k, 1)), 2)));
  CHECK(y1.item() == y2.item());
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor a = Tensor::scalar(2.0).set_requires_grad(true);
  NoGradGuard guard;
  Tensor y = square(a);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("deep chains destruct without stack overflow") {
  Tensor t = Tensor::scalar(1.0).set_requires_grad(true);
  Tensor acc = t;
  for (int i = 0; i < 200000; ++i) acc = add(acc, t);
  CHECK(acc.item() == doctest::Approx(200001.0));
  // destruction of the 200k-node chain happens here
}
