#include <doctest.h>

#include <cmath>

#include "taml/error.hpp"
#include "taml/gradcheck.hpp"
#include "taml/metatrain.hpp"
#include "taml/model.hpp"
#include "taml/ops.hpp"
#include "taml/optim.hpp"
#include "taml/worldgen.hpp"

using namespace taml;
using namespace taml::model;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig enc;
  enc.input_dim = 4;
  enc.layer_widths = {6, 5, 7};
  enc.eligible_layers = {1, 2};
  return enc;
}

ParamSet make_params(const EncoderConfig& enc, const HeadConfig& head,
                     uint64_t seed = 1) {
  ParamSet ps;
  Rng rng(seed);
  init_params(ps, enc, head, rng);
  return ps;
}

}  // namespace

TEST_CASE("encoder config validation") {
  EncoderConfig enc = small_encoder();
  enc.eligible_layers = {3};  // the last layer is not eligible
  CHECK_THROWS_AS(enc.validate(), ConfigError);
  enc.eligible_layers = {};
  CHECK_THROWS_AS(enc.validate(), ConfigError);
}

TEST_CASE("encode_to_layer rejects layer 0 and out-of-range layers") {
  const EncoderConfig enc = small_encoder();
  const auto ps = make_params(enc, HeadConfig{});
  Rng rng(2);
  Tensor x = Tensor::randn({3, 4}, rng);
  CHECK_THROWS_AS(encode_to_layer(x, 0, ps, enc), IndexError);
  CHECK_THROWS_AS(encode_to_layer(x, 4, ps, enc), IndexError);
}

TEST_CASE("identity-initialized single layer equals relu(x)") {
  EncoderConfig enc;
  enc.input_dim = 3;
  enc.layer_widths = {3, 3};
  enc.eligible_layers = {1};
  ParamSet ps;
  ps.add(layer_w_path(1), Tensor::of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  ps.add(layer_b_path(1), Tensor::zeros({3}));
  Tensor x = Tensor::of({{-1, 0.5, 2}});
  Tensor h = encode_to_layer(x, 1, ps, enc);
  CHECK(h.to_vector() == std::vector<double>{0, 0.5, 2});
}

TEST_CASE("split-forward consistency at every layer") {
  const EncoderConfig enc = small_encoder();
  const auto ps = make_params(enc, HeadConfig{}, 3);
  Rng rng(4);
  Tensor x = Tensor::randn({5, 4}, rng);
  const auto full = encode(x, ps, enc).to_vector();
  for (int l = 1; l <= enc.depth(); ++l) {
    Tensor h = encode_to_layer(x, l, ps, enc);
    const auto split = encode_from_layer(h, l, ps, enc).to_vector();
    CHECK(split == full);  // exact: identical op sequence
  }
  // shape contract
  Tensor h2 = encode_to_layer(x, 2, ps, enc);
  CHECK(h2.shape() == Shape{5, 5});
  CHECK(encode_from_layer(h2, 2, ps, enc).shape() == Shape{5, 7});
  CHECK_THROWS_AS(encode_from_layer(x, 2, ps, enc), ShapeError);
}

TEST_CASE("gradient through the split path matches finite differences") {
  const EncoderConfig enc = small_encoder();
  auto ps = make_params(enc, HeadConfig{}, 5);
  Rng rng(6);
  Tensor x = Tensor::randn({4, 4}, rng);
  auto f = [&](ParamSet& p) {
    Tensor h = encode_to_layer(x, 2, p, enc);
    Tensor out = encode_from_layer(h, 2, p, enc);
    return sum_all(mul(out, out));
  };
  CHECK(finite_diff_check(f, ps, 1e-6, 60).max_rel_err < 1e-4);
}

TEST_CASE("head_logits: nearest exemplar wins with cosine") {
  HeadConfig head;
  head.kind = "matching_cosine";
  ParamSet ps;
  ps.add(kLogTauPath, Tensor::scalar(std::log(10.0)));
  Tensor support = Tensor::of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  Tensor query = Tensor::of({{0, 0, 1}});
  Tensor logits = head_logits(support, {0, 1, 2}, query, 3, head, ps);
  CHECK(argmax_row(logits, 0) == 2);
}

TEST_CASE("head_logits: identical supports give uniform logits") {
  for (const char* kind : {"matching_cosine", "prototypical"}) {
    HeadConfig head;
    head.kind = kind;
    ParamSet ps;
    ps.add(kLogTauPath, Tensor::scalar(0.0));
    Tensor support = Tensor::of({{1, 2}, {1, 2}, {1, 2}});
    Tensor query = Tensor::of({{0.3, -0.4}, {2, 1}});
    Tensor logits = head_logits(support, {0, 1, 2}, query, 3, head, ps);
    for (std::size_t q = 0; q < 2; ++q)
      for (std::size_t c = 1; c < 3; ++c)
        CHECK(logits.at(q, c) == doctest::Approx(logits.at(q, 0)).epsilon(1e-12));
  }
}

TEST_CASE("prototypical hand example: logits (-0.02, -1.62)") {
  HeadConfig head;
  head.kind = "prototypical";
  ParamSet ps;
  ps.add(kLogTauPath, Tensor::scalar(0.0));  // tau = 1
  Tensor support = Tensor::of({{1, 0}, {0, 1}});
  Tensor query = Tensor::of({{0.9, 0.1}});
  Tensor logits = head_logits(support, {0, 1}, query, 2, head, ps);
  CHECK(logits.at(0, 0) == doctest::Approx(-0.02).epsilon(1e-9));
  CHECK(logits.at(0, 1) == doctest::Approx(-1.62).epsilon(1e-9));
}

TEST_CASE("cosine head is invariant to positive feature scaling") {
  HeadConfig head;
  head.kind = "matching_cosine";
  ParamSet ps;
  ps.add(kLogTauPath, Tensor::scalar(std::log(10.0)));
  Rng rng(7);
  Tensor support = Tensor::randn({6, 5}, rng);
  Tensor query = Tensor::randn({4, 5}, rng);
  const std::vector<int> sy{0, 0, 1, 1, 2, 2};
  Tensor l0 = head_logits(support, sy, query, 3, head, ps);
  Tensor l1 = head_logits(scale(support, 3.7), sy, scale(query, 3.7), 3, head, ps);
  for (std::size_t i = 0; i < l0.size(); ++i)
    CHECK(l0.to_vector()[i] == doctest::Approx(l1.to_vector()[i]).epsilon(1e-9));
}

TEST_CASE("prototypical head is invariant to feature translation") {
  HeadConfig head;
  head.kind = "prototypical";
  ParamSet ps;
  ps.add(kLogTauPath, Tensor::scalar(0.0));
  Rng rng(8);
  Tensor support = Tensor::randn({6, 5}, rng);
  Tensor query = Tensor::randn({4, 5}, rng);
  Tensor shift = Tensor::randn({5}, rng);
  const std::vector<int> sy{0, 0, 1, 1, 2, 2};
  Tensor l0 = head_logits(support, sy, query, 3, head, ps);
  Tensor l1 = head_logits(add_rows(support, shift), sy, add_rows(query, shift),
                          3, head, ps);
  for (std::size_t i = 0; i < l0.size(); ++i)
    CHECK(l0.to_vector()[i] == doctest::Approx(l1.to_vector()[i]).epsilon(1e-8));
}

TEST_CASE("head_logits rejects a class with zero support shots") {
  HeadConfig head;
  ParamSet ps;
  ps.add(kLogTauPath, Tensor::scalar(0.0));
  Tensor support = Tensor::of({{1, 0}, {0, 1}});
  Tensor query = Tensor::of({{1, 1}});
  CHECK_THROWS_AS(head_logits(support, {0, 0}, query, 2, head, ps),
                  ContractError);
}

TEST_CASE("episode_loss: near ln(N) on signal-free inputs, gradient checks out") {
  EncoderConfig enc;
  enc.input_dim = 16;
  enc.layer_widths = {16, 12};
  enc.eligible_layers = {1};
  HeadConfig head;
  auto ps = make_params(enc, head, 9);

  // pure-noise task: no class structure, so logits stay near uniform
  Rng rng(10);
  world::EpisodeTask task;
  task.n_way = 5;
  task.k_shot = 1;
  task.k_query = 15;
  task.support_x = Tensor::randn({5, 16}, rng);
  task.query_x = Tensor::randn({75, 16}, rng);
  for (int c = 0; c < 5; ++c) {
    task.support_y.push_back(c);
    for (int q = 0; q < 15; ++q) task.query_y.push_back(c);
  }
  const double loss = episode_loss(task, ps, enc, head).item();
  CHECK(std::fabs(loss - std::log(5.0)) < 0.5);

  // small benchmark episode for the finite-difference oracle
  world::BenchmarkSpec spec;
  spec.seed = 5;
  const auto bench = world::make_benchmark(spec);
  EncoderConfig enc2 = enc;
  enc2.input_dim = bench.spec.feature_dim;
  auto ps2 = make_params(enc2, head, 12);
  const auto tiny = world::sample_task(bench, bench.sources[1], 2, 1, 2, rng);
  auto f = [&](ParamSet& p) { return episode_loss(tiny, p, enc2, head); };
  CHECK(finite_diff_check(f, ps2, 1e-6, 60).max_rel_err < 1e-4);
}

TEST_CASE("episode_loss: overfitting one episode drives loss below 0.1") {
  world::BenchmarkSpec spec;
  spec.seed = 6;
  const auto bench = world::make_benchmark(spec);
  EncoderConfig enc;
  enc.input_dim = bench.spec.feature_dim;
  enc.layer_widths = {32, 16};
  enc.eligible_layers = {1};
  HeadConfig head;
  auto ps = make_params(enc, head, 11);

  Rng rng(12);
  const auto task = world::sample_task(bench, bench.sources[0], 3, 2, 4, rng);
  Adam opt(0.01);
  double loss = 0.0;
  for (int step = 0; step < 150; ++step) {
    Tape tape;
    Tensor l = episode_loss(task, ps, enc, head);
    ps.zero_grad();
    tape.backward(l);
    opt.step(ps, [](const std::string& p) { return p.rfind("fm.", 0) != 0; });
    loss = l.item();
  }
  CHECK(loss < 0.1);
}
