#include "taml/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "taml/error.hpp"
#include "taml/version.hpp"

namespace taml::world {

namespace {

using nlohmann::json;

constexpr int kMaxRejectionRounds = 1000;
constexpr double kCenterBox = 2.5;
// Minimum parameter-space gap between target and any source spec.
constexpr double kMinTargetParamDistance = 1.5;
constexpr int kTargetCandidatePool = 64;

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

ClassPrototype draw_prototype(int class_id, int dim, Rng& rng) {
  ClassPrototype p;
  p.class_id = class_id;
  p.within_scatter = rng.uniform(0.4, 0.8);
  p.center.resize(dim);
  for (double& c : p.center) c = rng.uniform(-kCenterBox, kCenterBox);
  return p;
}

bool separated(const ClassPrototype& a, const ClassPrototype& b) {
  const double min_gap = 3.0 * std::max(a.within_scatter, b.within_scatter);
  return l2(a.center, b.center) >= min_gap;
}

DomainSpec draw_domain(int domain_id, int dim, Rng& rng) {
  DomainSpec d;
  d.domain_id = domain_id;
  d.gain.resize(dim);
  d.bias.resize(dim);
  for (double& g : d.gain) g = std::exp(rng.uniform(-1.2, 1.2));
  for (double& b : d.bias) b = rng.uniform(-2.5, 2.5);
  d.contrast_exponent = rng.uniform(0.5, 2.0);
  d.noise_scale = rng.uniform(0.08, 0.2);
  return d;
}

void transform_sample(const DomainSpec& d, const double* raw, double* out,
                      int dim, Rng& rng) {
  for (int j = 0; j < dim; ++j) {
    const double a = raw[j];
    const double styled =
        d.gain[j] * std::copysign(std::pow(std::fabs(a), d.contrast_exponent), a) +
        d.bias[j];
    out[j] = styled + d.noise_scale * rng.normal();
  }
}

void draw_class_sample(const Benchmark& bench, const DomainSpec& d,
                       int class_id, double* out, Rng& rng) {
  const auto& proto = bench.prototypes.at(static_cast<std::size_t>(class_id));
  const int dim = bench.spec.feature_dim;
  std::vector<double> raw(dim);
  for (int j = 0; j < dim; ++j)
    raw[j] = proto.center[j] + proto.within_scatter * rng.normal();
  transform_sample(d, raw.data(), out, dim, rng);
}

}  // namespace

std::vector<double> DomainSpec::param_vector() const {
  std::vector<double> v;
  v.reserve(gain.size() + bias.size() + 2);
  v.insert(v.end(), gain.begin(), gain.end());
  v.insert(v.end(), bias.begin(), bias.end());
  v.push_back(contrast_exponent);
  v.push_back(noise_scale);
  return v;
}

const DomainSpec& Benchmark::domain_by_id(int domain_id) const {
  for (const auto& d : sources)
    if (d.domain_id == domain_id) return d;
  for (const auto& d : targets)
    if (d.domain_id == domain_id) return d;
  throw IndexError("unknown domain id " + std::to_string(domain_id));
}

Benchmark make_benchmark(const BenchmarkSpec& spec) {
  if (spec.n_source_domains < 2)
    throw ConfigError("benchmark needs at least 2 source domains, got " +
                      std::to_string(spec.n_source_domains));
  if (spec.n_target_domains < 1)
    throw ConfigError("benchmark needs at least 1 target domain");
  if (spec.classes_per_domain < 2)
    throw ConfigError("benchmark needs at least 2 classes per domain");
  if (spec.feature_dim < 1) throw ConfigError("feature_dim must be positive");

  Benchmark bench;
  bench.spec = spec;
  Rng rng = Rng::stream(spec.seed, stream_tag::kBenchmark);

  const int n_domains = spec.n_source_domains + spec.n_target_domains;
  const int n_classes = n_domains * spec.classes_per_domain;

  // Shared raw content: well-separated Gaussian class clusters.
  for (int c = 0; c < n_classes; ++c) {
    ClassPrototype proto;
    bool ok = false;
    for (int round = 0; round < kMaxRejectionRounds && !ok; ++round) {
      proto = draw_prototype(c, spec.feature_dim, rng);
      ok = true;
      for (const auto& other : bench.prototypes)
        ok = ok && separated(proto, other);
    }
    if (!ok)
      throw GenerationError(
          "could not separate class centers after 1000 rounds; "
          "increase feature_dim");
    bench.prototypes.push_back(std::move(proto));
  }

  int next_class = 0;
  for (int i = 0; i < spec.n_source_domains; ++i) {
    DomainSpec d = draw_domain(i, spec.feature_dim, rng);
    for (int c = 0; c < spec.classes_per_domain; ++c)
      d.class_ids.push_back(next_class++);
    bench.sources.push_back(std::move(d));
  }

  // Targets: among a candidate pool, keep the spec whose style statistics sit
  // farthest from every source (and clear a parameter-space floor), so the
  // held-out domain is a genuine style shift rather than a re-draw.
  for (int i = 0; i < spec.n_target_domains; ++i) {
    const int domain_id = spec.n_source_domains + i;
    std::vector<int> target_classes;
    for (int c = 0; c < spec.classes_per_domain; ++c)
      target_classes.push_back(next_class++);

    DomainSpec best;
    double best_min_style = -1.0;
    for (int round = 0; round < kTargetCandidatePool; ++round) {
      DomainSpec cand = draw_domain(domain_id, spec.feature_dim, rng);
      cand.class_ids = target_classes;
      Rng probe_rng = Rng::stream(spec.seed, stream_tag::kBenchmark ^ 0x5354ULL,
                                  static_cast<uint64_t>(round));
      double min_style = std::numeric_limits<double>::infinity();
      double min_param = std::numeric_limits<double>::infinity();
      for (const auto& s : bench.sources) {
        min_style = std::min(
            min_style, domain_shift_measure(bench, cand, s, 500, probe_rng));
        min_param = std::min(min_param, l2(cand.param_vector(), s.param_vector()));
      }
      if (min_param >= kMinTargetParamDistance && min_style > best_min_style) {
        best_min_style = min_style;
        best = std::move(cand);
      }
    }
    if (best_min_style < 0.0)
      throw GenerationError(
          "target domain could not be separated from sources in parameter "
          "space; increase feature_dim");
    bench.targets.push_back(std::move(best));
  }
  return bench;
}

EpisodeTask sample_task(const Benchmark& bench, const DomainSpec& domain,
                        int n_way, int k_shot, int k_query, Rng& rng) {
  if (n_way > static_cast<int>(domain.class_ids.size()))
    throw ContractError("sample_task: n_way " + std::to_string(n_way) +
                        " exceeds the " +
                        std::to_string(domain.class_ids.size()) +
                        " classes of domain " + std::to_string(domain.domain_id));
  if (n_way < 2 || k_shot < 1 || k_query < 1)
    throw ContractError("sample_task: need n_way >= 2, k_shot/k_query >= 1");

  const int dim = bench.spec.feature_dim;
  EpisodeTask task;
  task.n_way = n_way;
  task.k_shot = k_shot;
  task.k_query = k_query;
  task.domain_id = domain.domain_id;

  // Episode-local labels follow the order of class selection.
  const auto picks =
      rng.sample_without_replacement(static_cast<int>(domain.class_ids.size()),
                                     n_way);

  Tensor support = Tensor::zeros({static_cast<std::size_t>(n_way * k_shot),
                                  static_cast<std::size_t>(dim)});
  Tensor query = Tensor::zeros({static_cast<std::size_t>(n_way * k_query),
                                static_cast<std::size_t>(dim)});
  for (int c = 0; c < n_way; ++c) {
    const int class_id = domain.class_ids[static_cast<std::size_t>(picks[c])];
    for (int s = 0; s < k_shot; ++s) {
      draw_class_sample(bench, domain, class_id,
                        support.mutable_data() + (c * k_shot + s) * dim, rng);
      task.support_y.push_back(c);
    }
    for (int q = 0; q < k_query; ++q) {
      draw_class_sample(bench, domain, class_id,
                        query.mutable_data() + (c * k_query + q) * dim, rng);
      task.query_y.push_back(c);
    }
  }
  task.support_x = support;
  task.query_x = query;
  return task;
}

std::vector<double> draw_sample(const Benchmark& bench, const DomainSpec& domain,
                                int class_id, Rng& rng) {
  std::vector<double> out(static_cast<std::size_t>(bench.spec.feature_dim));
  draw_class_sample(bench, domain, class_id, out.data(), rng);
  return out;
}

double domain_shift_measure(const Benchmark& bench, const DomainSpec& a,
                            const DomainSpec& b, int n_probe, Rng& rng) {
  const int dim = bench.spec.feature_dim;
  auto style_stats = [&](const DomainSpec& d) {
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    std::vector<double> sample(dim);
    std::vector<double> sums(dim, 0.0), sq(dim, 0.0);
    for (int i = 0; i < n_probe; ++i) {
      // probes cycle through the domain's classes
      const int class_id =
          d.class_ids[static_cast<std::size_t>(i) % d.class_ids.size()];
      draw_class_sample(bench, d, class_id, sample.data(), rng);
      for (int j = 0; j < dim; ++j) {
        sums[j] += sample[j];
        sq[j] += sample[j] * sample[j];
      }
    }
    for (int j = 0; j < dim; ++j) {
      mean[j] = sums[j] / n_probe;
      var[j] = sq[j] / n_probe - mean[j] * mean[j];
    }
    mean.insert(mean.end(), var.begin(), var.end());
    return mean;
  };
  const auto sa = style_stats(a);
  const auto sb = style_stats(b);
  return l2(sa, sb);
}

void validate_task(const EpisodeTask& task) {
  const int n = task.n_way, ks = task.k_shot, kq = task.k_query;
  if (task.support_x.rows() != static_cast<std::size_t>(n * ks) ||
      task.query_x.rows() != static_cast<std::size_t>(n * kq))
    throw ContractError("episode row counts do not match (n_way, k_shot, k_query)");
  if (task.support_y.size() != static_cast<std::size_t>(n * ks) ||
      task.query_y.size() != static_cast<std::size_t>(n * kq))
    throw ContractError("episode label counts do not match feature rows");
  for (int c = 0; c < n; ++c) {
    for (int s = 0; s < ks; ++s)
      if (task.support_y[static_cast<std::size_t>(c * ks + s)] != c)
        throw ContractError("support labels are not class-major");
    for (int q = 0; q < kq; ++q)
      if (task.query_y[static_cast<std::size_t>(c * kq + q)] != c)
        throw ContractError("query labels are not class-major");
  }
}

namespace {

json domain_to_json(const DomainSpec& d) {
  return json{{"domain_id", d.domain_id},
              {"gain", d.gain},
              {"bias", d.bias},
              {"contrast_exponent", d.contrast_exponent},
              {"noise_scale", d.noise_scale},
              {"class_ids", d.class_ids}};
}

DomainSpec domain_from_json(const json& j) {
  DomainSpec d;
  d.domain_id = j.at("domain_id").get<int>();
  d.gain = j.at("gain").get<std::vector<double>>();
  d.bias = j.at("bias").get<std::vector<double>>();
  d.contrast_exponent = j.at("contrast_exponent").get<double>();
  d.noise_scale = j.at("noise_scale").get<double>();
  d.class_ids = j.at("class_ids").get<std::vector<int>>();
  return d;
}

}  // namespace

std::string benchmark_to_json(const Benchmark& bench) {
  json j;
  j["schema"] = "benchmark_v1";
  j["version"] = std::string(kEngineVersion);
  j["config"] = {{"seed", bench.spec.seed},
                 {"n_source_domains", bench.spec.n_source_domains},
                 {"n_target_domains", bench.spec.n_target_domains},
                 {"classes_per_domain", bench.spec.classes_per_domain},
                 {"feature_dim", bench.spec.feature_dim}};
  j["prototypes"] = json::array();
  for (const auto& p : bench.prototypes)
    j["prototypes"].push_back(json{{"class_id", p.class_id},
                                   {"center", p.center},
                                   {"within_scatter", p.within_scatter}});
  j["source_domains"] = json::array();
  for (const auto& d : bench.sources) j["source_domains"].push_back(domain_to_json(d));
  j["target_domains"] = json::array();
  for (const auto& d : bench.targets) j["target_domains"].push_back(domain_to_json(d));
  return j.dump(2) + "\n";
}

Benchmark benchmark_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("schema", "") != "benchmark_v1")
    throw IoError("benchmark file schema is not benchmark_v1");
  Benchmark bench;
  const auto& cfg = j.at("config");
  bench.spec.seed = cfg.at("seed").get<uint64_t>();
  bench.spec.n_source_domains = cfg.at("n_source_domains").get<int>();
  bench.spec.n_target_domains = cfg.at("n_target_domains").get<int>();
  bench.spec.classes_per_domain = cfg.at("classes_per_domain").get<int>();
  bench.spec.feature_dim = cfg.at("feature_dim").get<int>();
  for (const auto& pj : j.at("prototypes")) {
    ClassPrototype p;
    p.class_id = pj.at("class_id").get<int>();
    p.center = pj.at("center").get<std::vector<double>>();
    p.within_scatter = pj.at("within_scatter").get<double>();
    bench.prototypes.push_back(std::move(p));
  }
  for (const auto& dj : j.at("source_domains"))
    bench.sources.push_back(domain_from_json(dj));
  for (const auto& dj : j.at("target_domains"))
    bench.targets.push_back(domain_from_json(dj));
  return bench;
}

void save_benchmark(const std::string& path, const Benchmark& bench) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << benchmark_to_json(bench);
  if (!out) throw IoError("failed writing benchmark to '" + path + "'");
}

Benchmark load_benchmark(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open benchmark file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return benchmark_from_json(text);
}

}  // namespace taml::world
