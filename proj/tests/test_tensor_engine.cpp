#include <cmath>
#include <functional>

#include "doctest.h"
#include "mclstm/engine.hpp"
#include "mclstm/random.hpp"

using namespace mclstm;
namespace eng = mclstm::engine;
using eng::Var;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Philox rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Loss = sum(w * f(inputs)) with fixed random weights w, so every output
// entry contributes a distinct coefficient.
using Fn = std::function<Var(const std::vector<Var>&)>;

double weighted_loss(const Fn& f, const std::vector<Tensor>& inputs, const Tensor& w) {
  eng::NoGradGuard guard;
  std::vector<Var> vs;
  for (const auto& t : inputs) vs.push_back(eng::constant(t));
  const Var y = f(vs);
  double s = 0.0;
  for (std::size_t i = 0; i < y.value().size(); ++i) s += w[i] * y.value()[i];
  return s;
}

double check_gradients(const Fn& f, std::vector<Tensor> inputs, std::uint64_t seed = 7) {
  std::vector<Var> params;
  for (const auto& t : inputs) params.push_back(eng::parameter(t));
  const Var y = f(params);
  const Tensor w = random_tensor(y.shape(), seed);
  const Var loss = eng::sum(eng::mul(y, eng::constant(w)));
  eng::backward(loss);
  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    const Tensor g = params[p].grad();
    for (std::size_t i = 0; i < inputs[p].size(); ++i) {
      const double orig = inputs[p][i];
      const double h = 1e-6;
      inputs[p][i] = orig + h;
      const double up = weighted_loss(f, inputs, w);
      inputs[p][i] = orig - h;
      const double down = weighted_loss(f, inputs, w);
      inputs[p][i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(numeric - g[i]) / std::max({std::abs(numeric), std::abs(g[i]), 1e-3});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  t.at(1, 2) = 4.0;
  CHECK(t[5] == 4.0);
  CHECK(sum(t) == doctest::Approx(11.5));
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK(Tensor::identity(3).at(1, 1) == 1.0);
  CHECK(Tensor::identity(3).at(0, 1) == 0.0);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS(t.reshaped({4, 2}));
}

TEST_CASE("elementwise ops match finite differences") {
  const Tensor a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2, 0.5, 2.0);
  CHECK(check_gradients([](auto& v) { return eng::add(v[0], v[1]); }, {a, b}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::sub(v[0], v[1]); }, {a, b}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::mul(v[0], v[1]); }, {a, b}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::div(v[0], v[1]); }, {a, b}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::affine(v[0], -2.0, 0.5); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::sigmoid(v[0]); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::tanh(v[0]); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::exp(v[0]); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::log(v[0]); }, {b}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::sqrt(v[0]); }, {b}) < 1e-7);
  // Away from the kink relu is linear.
  CHECK(check_gradients([](auto& v) { return eng::relu(v[0]); }, {b}) < 1e-7);
}

TEST_CASE("broadcasting a trailing suffix") {
  const Tensor a = random_tensor({2, 3, 4}, 3), bias = random_tensor({4}, 4);
  CHECK(check_gradients([](auto& v) { return eng::add(v[0], v[1]); }, {a, bias}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::mul(v[0], v[1]); }, {a, bias}) < 1e-7);
  const Tensor scalar = random_tensor({1}, 5);
  CHECK(check_gradients([](auto& v) { return eng::mul(v[0], v[1]); }, {a, scalar}) < 1e-7);
  CHECK_THROWS_AS(eng::add(eng::constant(a), eng::constant(Tensor({3}))), DimensionError);
}

TEST_CASE("matmul and batch_matvec against loops and finite differences") {
  const Tensor a = random_tensor({5, 3}, 6), b = random_tensor({3, 4}, 7);
  const Var y = eng::matmul(eng::constant(a), eng::constant(b));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(y.value().at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  CHECK(check_gradients([](auto& v) { return eng::matmul(v[0], v[1]); }, {a, b}) < 1e-7);
  // Large enough to take the blocked path.
  const Tensor big_a = random_tensor({40, 30}, 8), big_b = random_tensor({30, 70}, 9);
  CHECK(check_gradients([](auto& v) { return eng::matmul(v[0], v[1]); }, {big_a, big_b}) < 1e-4);
  CHECK_THROWS_AS(eng::matmul(eng::constant(a), eng::constant(a)), DimensionError);

  const Tensor shared = random_tensor({4, 3}, 10), per = random_tensor({2, 4, 3}, 11);
  const Tensor v = random_tensor({2, 3}, 12);
  CHECK(check_gradients([](auto& x) { return eng::batch_matvec(x[0], x[1]); }, {shared, v}) < 1e-7);
  CHECK(check_gradients([](auto& x) { return eng::batch_matvec(x[0], x[1]); }, {per, v}) < 1e-7);
  const Var out = eng::batch_matvec(eng::constant(per), eng::constant(v));
  double s = 0.0;
  for (std::size_t q = 0; q < 3; ++q) s += per.at(1, 2, q) * v.at(1, q);
  CHECK(out.value().at(1, 2) == doctest::Approx(s).epsilon(1e-14));
}

TEST_CASE("softmax and l1_normalize produce distributions along the axis") {
  const Tensor x = random_tensor({2, 5, 3}, 13, -4.0, 4.0);
  const Var s = eng::softmax(eng::constant(x), 1);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t m = 0; m < 3; ++m) {
      double col = 0.0;
      for (std::size_t k = 0; k < 5; ++k) col += s.value().at(b, k, m);
      CHECK(col == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  CHECK(check_gradients([](auto& v) { return eng::softmax(v[0], 1); }, {x}) < 1e-6);
  CHECK(check_gradients([](auto& v) { return eng::softmax(v[0], 2); }, {x}) < 1e-6);
  // Stable for huge logits.
  const Var big = eng::softmax(eng::constant(Tensor({1, 2}, std::vector<double>{1000.0, 0.0})), 1);
  CHECK(big.value()[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(big.value()[1]));

  const Tensor pos = random_tensor({3, 4}, 14, 0.1, 2.0);
  CHECK(check_gradients([](auto& v) { return eng::l1_normalize(v[0], 1); }, {pos}) < 1e-7);
  const Var zero = eng::l1_normalize(eng::constant(Tensor({1, 4})), 1);
  for (double v : zero.value().data()) CHECK(v == 0.25);
}

TEST_CASE("reductions, concat, slice and reshape") {
  const Tensor a = random_tensor({3, 4}, 15), b = random_tensor({3, 2}, 16);
  CHECK(check_gradients([](auto& v) { return eng::sum_axis(v[0], 0); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::sum_axis(v[0], 1); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::mean(v[0]); }, {a}) < 1e-7);
  CHECK(check_gradients(
            [](auto& v) {
              const Var parts[] = {v[0], v[1]};
              return eng::concat(parts, 1);
            },
            {a, b}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::slice(v[0], 1, 1, 2); }, {a}) < 1e-7);
  CHECK(check_gradients([](auto& v) { return eng::reshape(v[0], {2, 6}); }, {a}) < 1e-7);
  CHECK_THROWS_AS(eng::slice(eng::constant(a), 1, 3, 2), DimensionError);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  const Var x = eng::parameter(Tensor::vector({2.0}));
  const Var y = eng::mul(x, x);
  const Var z = eng::add(y, y);  // 2 x^2 -> 4 x
  eng::backward(eng::sum(z));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("no-grad mode records nothing") {
  const Var p = eng::parameter(Tensor::vector({1.0, 2.0}));
  eng::NoGradGuard guard;
  CHECK_FALSE(eng::grad_enabled());
  const Var y = eng::mul(p, p);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("deep chains backpropagate without recursion limits") {
  Var x = eng::parameter(Tensor::vector({0.5}));
  Var y = x;
  for (int i = 0; i < 100000; ++i) y = eng::affine(y, 1.0, 0.0);
  eng::backward(eng::sum(y));
  CHECK(x.grad()[0] == 1.0);
}
