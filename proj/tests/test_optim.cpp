#include <doctest.h>

#include <cmath>

#include "taml/error.hpp"
#include "taml/ops.hpp"
#include "taml/optim.hpp"
#include "taml/tensor.hpp"

using namespace taml;

namespace {

ParamSet one_param(double value) {
  ParamSet ps;
  ps.add("theta", Tensor::vec({value}));
  return ps;
}

void set_grad(ParamSet& ps, const std::string& path, double g) {
  Tape tape;
  Tensor loss = mul_scalar_t(sum_all(ps.at(path)), Tensor::scalar(g));
  tape.backward(loss);
}

}  // namespace

TEST_CASE("sgd: lr=0.1, theta=1, grad=2 -> 0.8") {
  ParamSet ps = one_param(1.0);
  set_grad(ps, "theta", 2.0);
  Sgd opt(0.1);
  opt.step(ps);
  CHECK(ps.at("theta").data()[0] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("sgd: zero grad is a fixed point") {
  ParamSet ps = one_param(1.5);
  set_grad(ps, "theta", 0.0);
  Sgd opt(0.3);
  opt.step(ps);
  CHECK(ps.at("theta").data()[0] == 1.5);
}

TEST_CASE("adam: first step moves by ~lr regardless of gradient size") {
  // bias-corrected first step: lr * g / (|g| + eps)
  const double lr = 1e-3, g = 0.5;
  ParamSet ps = one_param(2.0);
  set_grad(ps, "theta", g);
  Adam opt(lr);
  opt.step(ps);
  const double delta = std::fabs(ps.at("theta").data()[0] - 2.0);
  CHECK(delta == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("adam: matches the update formula over several steps") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ParamSet ps = one_param(1.0);
  Adam opt(lr, b1, b2, eps);

  double theta = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.05, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    ps.zero_grad();
    set_grad(ps, "theta", g);
    opt.step(ps);

    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(ps.at("theta").data()[0] == doctest::Approx(theta).epsilon(1e-12));
  }
}

TEST_CASE("missing grad raises a contract error naming the path") {
  ParamSet ps;
  ps.add("encoder.w", Tensor::vec({1.0}));
  Sgd opt(0.1);
  try {
    opt.step(ps);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("path filter restricts the update") {
  ParamSet ps;
  ps.add("fm.w_alpha", Tensor::vec({1.0}));
  ps.add("encoder.w", Tensor::vec({1.0}));
  {
    Tape tape;
    tape.backward(add(sum_all(ps.at("fm.w_alpha")), sum_all(ps.at("encoder.w"))));
  }
  Sgd opt(0.5);
  opt.step(ps, [](const std::string& p) { return p.rfind("encoder.", 0) == 0; });
  CHECK(ps.at("encoder.w").data()[0] == doctest::Approx(0.5));
  CHECK(ps.at("fm.w_alpha").data()[0] == 1.0);  // untouched
}

TEST_CASE("make_optimizer rejects unknown kinds") {
  CHECK_THROWS_AS(make_optimizer("adagrad", 0.1), ConfigError);
}
