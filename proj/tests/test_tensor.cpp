#include <doctest.h>

#include <cmath>

#include "taml/error.hpp"
#include "taml/ops.hpp"
#include "taml/rng.hpp"
#include "taml/tensor.hpp"

using namespace taml;

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::of({{1, 2}, {3, 4}});
  CHECK(t.shape() == Shape{2, 2});
  CHECK(t.at(1, 0) == 3.0);
  CHECK_THROWS_AS(Tensor::from({1, 2, 3}, {2, 2}), ShapeError);
}

TEST_CASE("backward: sum gives ones") {
  Tensor x = Tensor::vec({1, 2, 3}).set_requires_grad(true);
  Tape tape;
  Tensor loss = sum_all(x);
  tape.backward(loss);
  CHECK(x.grad_vector() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward: quadratic") {
  Tensor x = Tensor::vec({2}).set_requires_grad(true);
  Tape tape;
  Tensor loss = sum_all(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad_vector()[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::vec({1, 2}).set_requires_grad(true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("gradients accumulate additively across uses") {
  Tensor x = Tensor::vec({3}).set_requires_grad(true);
  Tape tape;
  // loss = x*x + 2x, dloss/dx = 2x + 2 = 8
  Tensor loss = sum_all(add(mul(x, x), scale(x, 2.0)));
  tape.backward(loss);
  CHECK(x.grad_vector()[0] == doctest::Approx(8.0));
}

TEST_CASE("linearity of backward") {
  Rng rng(7);
  Tensor x = Tensor::randn({4}, rng).set_requires_grad(true);
  const double a = 1.7, b = -0.6;

  auto grad_of = [&](auto make_loss) {
    x.zero_grad();
    Tape tape;
    tape.backward(make_loss());
    return x.grad_vector();
  };

  auto f = [&] { return sum_all(mul(x, x)); };
  auto g = [&] { return sum_all(exp_t(x)); };
  auto combined = [&] { return add(scale(f(), a), scale(g(), b)); };

  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto gc = grad_of(combined);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("no recording happens without an active tape") {
  Tensor x = Tensor::vec({1, 2}).set_requires_grad(true);
  Tensor y = mul(x, x);  // outside any tape
  Tape tape;
  Tensor loss = sum_all(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad_vector() == std::vector<double>{2, 4});
  CHECK(!y.has_grad());
}

TEST_CASE("paramset: unique paths, lexicographic order, hash purity") {
  ParamSet ps;
  ps.add("b.second", Tensor::vec({1}));
  ps.add("a.first", Tensor::vec({2}));
  CHECK_THROWS_AS(ps.add("a.first", Tensor::vec({3})), ContractError);

  std::vector<std::string> order;
  for (auto& [path, t] : ps) order.push_back(path);
  CHECK(order == std::vector<std::string>{"a.first", "b.second"});

  const uint64_t h0 = ps.content_hash();
  ps.at("a.first").mutable_data()[0] = 99.0;
  CHECK(ps.content_hash() != h0);
}

TEST_CASE("non-finite op outputs are rejected") {
  Tensor x = Tensor::vec({1e308});
  CHECK_THROWS_AS(mul(x, x), NumericError);
  Tensor z = Tensor::vec({0.0});
  CHECK_THROWS_AS(div(z, z), NumericError);
}
