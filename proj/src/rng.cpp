#include "taml/rng.hpp"

#include <cmath>

#include "taml/error.hpp"

namespace taml {

namespace {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

Rng Rng::stream(uint64_t seed, uint64_t tag, uint64_t index) {
  uint64_t s = seed;
  uint64_t a = splitmix64(s);
  s ^= tag * 0x9e3779b97f4a7c15ULL;
  uint64_t b = splitmix64(s);
  s ^= index + 0xd1b54a32d192ed03ULL;
  Rng r;
  r.state_[0] = a;
  r.state_[1] = b;
  r.state_[2] = splitmix64(s);
  r.state_[3] = splitmix64(s);
  return r;
}

Rng Rng::from_state(const std::array<uint64_t, 4>& state) {
  Rng r;
  r.state_ = state;
  return r;
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller without caching: a normal() call always consumes two draws.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();  // log(0) guard; astronomically rare
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw ContractError("gamma shape must be positive");
  if (shape < 1.0) {
    // Boost identity: Gamma(a) = Gamma(a+1) * U^(1/a).
    double g = gamma(shape + 1.0);
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return g * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze method.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

std::vector<double> Rng::dirichlet(const std::vector<double>& concentration) {
  if (concentration.empty())
    throw ContractError("dirichlet needs at least one concentration entry");
  for (double g : concentration)
    if (!(g > 0.0))
      throw ContractError("dirichlet concentrations must be positive");

  std::vector<double> draw(concentration.size());
  for (int attempt = 0; attempt < 100; ++attempt) {
    double total = 0.0;
    for (std::size_t i = 0; i < concentration.size(); ++i) {
      draw[i] = gamma(concentration[i]);
      total += draw[i];
    }
    if (total > 0.0 && std::isfinite(total)) {
      for (double& w : draw) w /= total;
      return draw;
    }
  }
  throw NumericError("dirichlet sampling underflowed to zero 100 times");
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw ContractError("uniform_int needs n > 0");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<int>(x % un);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k > n) throw ContractError("cannot sample more items than available");
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + uniform_int(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

void Rng::fill_normal(double* out, std::size_t count, double stddev) {
  for (std::size_t i = 0; i < count; ++i) out[i] = stddev * normal();
}

}  // namespace taml
