#include <doctest.h>

#include <cmath>

#include "raffnet/nn.hpp"
#include "support.hpp"

using namespace raffnet;

TEST_CASE("ce_loss against a scalar softmax") {
  Vector logits(4);
  logits << 1.0, 2.0, 0.5, -1.0;
  double denom = 0.0;
  for (double v : {1.0, 2.0, 0.5, -1.0}) denom += std::exp(v);
  const double oracle = -std::log(std::exp(2.0) / denom);
  CHECK(std::abs(ce_loss(logits, 1) - oracle) <= 1e-9);
}

TEST_CASE("ce_loss edge values") {
  CHECK(ce_loss(Vector::Zero(4), 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Vector saturated(4);
  saturated << 100, 0, 0, 0;
  CHECK(ce_loss(saturated, 0) < 1e-6);
  CHECK_THROWS_AS(ce_loss(saturated, 4), DataError);
  saturated(1) = std::nan("");
  CHECK_THROWS_AS(ce_loss(saturated, 0), NonFiniteError);
}

TEST_CASE("ce_loss_grad is softmax minus one-hot") {
  Rng rng(3);
  const Vector logits = test::random_vector(4, rng);
  const Vector g = ce_loss_grad(logits, 2);
  for (Index k = 0; k < 4; ++k) {
    Vector up = logits, down = logits;
    up(k) += 1e-6;
    down(k) -= 1e-6;
    CHECK(std::abs((ce_loss(up, 2) - ce_loss(down, 2)) / 2e-6 - g(k)) < 1e-7);
  }
  CHECK(std::abs(g.sum()) < 1e-12);
}

TEST_CASE("sigmoid stays in range for large magnitudes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) <= 1.0);
  Vector v(2);
  v << -1.0, 1.0;
  CHECK(sigmoid(v)(0) + sigmoid(v)(1) == doctest::Approx(1.0));
}

TEST_CASE("l2_normalize") {
  Vector v(2);
  v << 3, 4;
  const Vector u = l2_normalize(v);
  CHECK(u(0) == doctest::Approx(0.6));
  CHECK(u(1) == doctest::Approx(0.8));
  CHECK(l2_normalize(u).isApprox(u, 1e-15));
  CHECK_THROWS_AS(l2_normalize(Vector::Zero(2)), DataError);
}

TEST_CASE("l2_normalize_backward matches finite differences") {
  Rng rng(11);
  const Vector u = test::random_vector(5, rng);
  const Vector w = test::random_vector(5, rng);
  const Vector g = l2_normalize_backward(u, w);
  for (Index i = 0; i < 5; ++i) {
    Vector up = u, down = u;
    up(i) += 1e-6;
    down(i) -= 1e-6;
    const double fd = (w.dot(l2_normalize(up)) - w.dot(l2_normalize(down))) / 2e-6;
    CHECK(std::abs(fd - g(i)) < 1e-8);
  }
}

TEST_CASE("linear forward and backward") {
  Linear<double> l(3, 2);
  l.weight << 1, 2, 3, -1, 0, 1;
  l.bias << 0.5, -0.5;
  Vector x(3);
  x << 1, 1, 2;
  const Vector y = l(x);
  CHECK(y(0) == 9.5);
  CHECK(y(1) == 0.5);
  Linear<double> g(3, 2);
  Vector up(2);
  up << 1, 2;
  const Vector dx = l.backward(x, up, g);
  CHECK(dx(0) == -1);
  CHECK(dx(1) == 2);
  CHECK(dx(2) == 5);
  CHECK(g.weight(1, 2) == 4);
  CHECK(g.bias(1) == 2);
  CHECK_THROWS_AS(l(Vector::Zero(2)), DimensionError);
}
