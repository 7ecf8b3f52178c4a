#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taml/rng.hpp"
#include "taml/tensor.hpp"

namespace taml::world {

struct ClassPrototype {
  int class_id = 0;
  std::vector<double> center;  // length D
  double within_scatter = 0.5;
};

// Parametric "style": y = gain * sign(a)|a|^p + bias + noise_scale * N(0,1),
// applied channel-wise to raw class content a.
struct DomainSpec {
  int domain_id = 0;
  std::vector<double> gain;  // strictly positive, length D
  std::vector<double> bias;  // length D
  double contrast_exponent = 1.0;  // in [0.5, 2.0]
  double noise_scale = 0.1;
  std::vector<int> class_ids;

  std::vector<double> param_vector() const;  // [gain, bias, p, noise]
};

// One N-way episode; rows are class-major, shot-minor inside each block and
// support and query always share the same N classes with labels in 0..N-1.
struct EpisodeTask {
  Tensor support_x;  // [N*Ks, D]
  std::vector<int> support_y;
  Tensor query_x;  // [N*Kq, D]
  std::vector<int> query_y;
  int n_way = 0;
  int k_shot = 0;
  int k_query = 0;
  int domain_id = 0;

  std::size_t rows() const {
    return static_cast<std::size_t>(n_way) * (k_shot + k_query);
  }
};

struct BenchmarkSpec {
  uint64_t seed = 0;
  int n_source_domains = 4;
  int n_target_domains = 1;
  int classes_per_domain = 8;
  int feature_dim = 16;
};

struct Benchmark {
  BenchmarkSpec spec;
  std::vector<ClassPrototype> prototypes;  // indexed by class_id
  std::vector<DomainSpec> sources;
  std::vector<DomainSpec> targets;

  const DomainSpec& domain_by_id(int domain_id) const;
};

// Deterministic in spec.seed. Classes are disjoint across all domains and
// target domain parameters are pushed away from every source in parameter
// space (farthest of a candidate pool, subject to a minimum distance).
Benchmark make_benchmark(const BenchmarkSpec& spec);

EpisodeTask sample_task(const Benchmark& bench, const DomainSpec& domain,
                        int n_way, int k_shot, int k_query, Rng& rng);

// One styled sample of a class through its domain transform.
std::vector<double> draw_sample(const Benchmark& bench, const DomainSpec& domain,
                                int class_id, Rng& rng);

// L2 distance between the concatenated per-channel (mean, variance) of
// n_probe transformed samples from each domain.
double domain_shift_measure(const Benchmark& bench, const DomainSpec& a,
                            const DomainSpec& b, int n_probe, Rng& rng);

// Throws ContractError describing the first violated episode invariant.
void validate_task(const EpisodeTask& task);

std::string benchmark_to_json(const Benchmark& bench);
Benchmark benchmark_from_json(const std::string& text);
void save_benchmark(const std::string& path, const Benchmark& bench);
Benchmark load_benchmark(const std::string& path);

}  // namespace taml::world
