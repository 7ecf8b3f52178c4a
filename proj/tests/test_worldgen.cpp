#include <doctest.h>

#include <cmath>

#include "taml/error.hpp"
#include "taml/worldgen.hpp"

using namespace taml;
using namespace taml::world;

namespace {

Benchmark default_bench(uint64_t seed = 0) {
  BenchmarkSpec spec;
  spec.seed = seed;
  return make_benchmark(spec);
}

}  // namespace

TEST_CASE("make_benchmark is deterministic in the seed") {
  const Benchmark a = default_bench(1);
  const Benchmark b = default_bench(1);
  CHECK(benchmark_to_json(a) == benchmark_to_json(b));

  const Benchmark c = default_bench(2);
  CHECK(a.sources[0].gain != c.sources[0].gain);
}

TEST_CASE("make_benchmark validates its spec") {
  BenchmarkSpec spec;
  spec.n_source_domains = 1;
  CHECK_THROWS_AS(make_benchmark(spec), ConfigError);
}

TEST_CASE("benchmark invariants: separation and disjoint classes") {
  const Benchmark bench = default_bench(7);

  // class centers separated by >= 3x within_scatter
  for (std::size_t i = 0; i < bench.prototypes.size(); ++i) {
    for (std::size_t j = i + 1; j < bench.prototypes.size(); ++j) {
      const auto& a = bench.prototypes[i];
      const auto& b = bench.prototypes[j];
      double d2 = 0.0;
      for (std::size_t k = 0; k < a.center.size(); ++k) {
        const double d = a.center[k] - b.center[k];
        d2 += d * d;
      }
      CHECK(std::sqrt(d2) >= 3.0 * std::max(a.within_scatter, b.within_scatter));
    }
  }

  // target classes disjoint from source classes
  for (const auto& t : bench.targets)
    for (int tc : t.class_ids)
      for (const auto& s : bench.sources)
        for (int sc : s.class_ids) CHECK(tc != sc);

  // gain entries strictly positive
  for (const auto& d : bench.sources)
    for (double g : d.gain) CHECK(g > 0.0);
}

TEST_CASE("sample_task shapes and canonical ordering") {
  const Benchmark bench = default_bench(3);
  Rng rng = Rng::stream(3, stream_tag::kTrain);
  const auto task = sample_task(bench, bench.sources[0], 5, 1, 15, rng);
  CHECK(task.support_x.shape() == Shape{5, 16});
  CHECK(task.query_x.shape() == Shape{75, 16});
  validate_task(task);
}

TEST_CASE("sample_task is deterministic given the rng state") {
  const Benchmark bench = default_bench(3);
  Rng a = Rng::stream(3, stream_tag::kTrain, 5);
  Rng b = Rng::stream(3, stream_tag::kTrain, 5);
  const auto ta = sample_task(bench, bench.sources[1], 4, 2, 3, a);
  const auto tb = sample_task(bench, bench.sources[1], 4, 2, 3, b);
  CHECK(ta.support_x.to_vector() == tb.support_x.to_vector());
  CHECK(ta.query_x.to_vector() == tb.query_x.to_vector());
}

TEST_CASE("sample_task rejects n_way above the class count") {
  const Benchmark bench = default_bench(3);
  Rng rng(1);
  CHECK_THROWS_AS(sample_task(bench, bench.sources[0], 100, 1, 1, rng),
                  ContractError);
}

TEST_CASE("degenerate domain: no scatter, no noise -> identical rows") {
  Benchmark bench = default_bench(5);
  // strip all randomness from the generative path
  for (auto& p : bench.prototypes) p.within_scatter = 1e-300;
  DomainSpec quiet = bench.sources[0];
  quiet.noise_scale = 0.0;
  Rng rng(1);
  const auto task = sample_task(bench, quiet, 3, 2, 2, rng);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(task.support_x.at(static_cast<std::size_t>(c * 2), j) ==
            doctest::Approx(task.support_x.at(static_cast<std::size_t>(c * 2 + 1), j))
                .epsilon(1e-9));
    }
  }
}

TEST_CASE("episode validity over 1000 sampled tasks") {
  const Benchmark bench = default_bench(11);
  Rng rng = Rng::stream(11, stream_tag::kTrain);
  for (int i = 0; i < 1000; ++i) {
    const auto& domain = bench.sources[static_cast<std::size_t>(i) % bench.sources.size()];
    const auto task = sample_task(bench, domain, 5, 1, 3, rng);
    validate_task(task);
  }
}

TEST_CASE("domain_shift_measure: identity, bias shift, and source/target gap") {
  const Benchmark bench = default_bench(13);

  Rng rng(99);
  const double self = domain_shift_measure(bench, bench.sources[0],
                                           bench.sources[0], 1000, rng);
  CHECK(self < 0.05 * std::sqrt(16.0) * 3);  // MC noise only
  CHECK(self >= 0.0);

  // equal specs except a bias shift delta: distance ~ |delta| * sqrt(D)
  DomainSpec shifted = bench.sources[0];
  const double delta = 0.8;
  for (double& b : shifted.bias) b += delta;
  Rng rng2(100);
  const double dist =
      domain_shift_measure(bench, bench.sources[0], shifted, 100000, rng2);
  CHECK(dist == doctest::Approx(delta * std::sqrt(16.0)).epsilon(0.10));

  // default benchmark: every source is strictly separated from the target
  Rng rng3(101);
  for (const auto& s : bench.sources) {
    const double d =
        domain_shift_measure(bench, s, bench.targets[0], 1000, rng3);
    CHECK(d > 0.0);
  }
}

TEST_CASE("source-vs-target style distance exceeds within-source distance") {
  const Benchmark bench = default_bench(0);
  Rng rng(7);
  double st_sum = 0.0;
  int st_n = 0;
  for (const auto& s : bench.sources) {
    st_sum += domain_shift_measure(bench, s, bench.targets[0], 1000, rng);
    ++st_n;
  }
  double ss_sum = 0.0;
  int ss_n = 0;
  for (std::size_t i = 0; i < bench.sources.size(); ++i)
    for (std::size_t j = i + 1; j < bench.sources.size(); ++j) {
      ss_sum += domain_shift_measure(bench, bench.sources[i], bench.sources[j],
                                     1000, rng);
      ++ss_n;
    }
  CHECK(st_sum / st_n > ss_sum / ss_n);
}

TEST_CASE("benchmark json round trip") {
  const Benchmark bench = default_bench(21);
  const std::string text = benchmark_to_json(bench);
  const Benchmark copy = benchmark_from_json(text);
  CHECK(benchmark_to_json(copy) == text);
  CHECK_THROWS_AS(benchmark_from_json("{\"schema\":\"other\"}"), IoError);
}
