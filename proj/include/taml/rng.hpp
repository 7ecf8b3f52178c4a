#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace taml {

// xoshiro256++ with splitmix64 seeding. All distributions are implemented
// in-house so that a (seed, stream) pair produces the same draws on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Independent stream mixed from (seed, tag, index). Used to split
  // per-episode / per-purpose streams off one master seed so parallel and
  // serial evaluation see identical draws.
  static Rng stream(uint64_t seed, uint64_t tag, uint64_t index = 0);

  static Rng from_state(const std::array<uint64_t, 4>& state);
  const std::array<uint64_t, 4>& state() const { return state_; }

  uint64_t next_u64();

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();  // N(0,1), Box-Muller, exactly two u64 draws
  double gamma(double shape);  // Gamma(shape, 1), shape > 0
  std::vector<double> dirichlet(const std::vector<double>& concentration);

  int uniform_int(int n);  // uniform on [0, n)
  // First k entries of a partial Fisher-Yates shuffle of 0..n-1.
  std::vector<int> sample_without_replacement(int n, int k);

  void fill_normal(double* out, std::size_t count, double stddev = 1.0);

 private:
  Rng() = default;
  std::array<uint64_t, 4> state_{};
};

// Stream tags used across the project; fixed values keep checkpoints stable.
namespace stream_tag {
inline constexpr uint64_t kBenchmark = 0x62656e6368ULL;  // "bench"
inline constexpr uint64_t kTrain = 0x747261696eULL;      // "train"
inline constexpr uint64_t kEval = 0x6576616cULL;         // "eval"
inline constexpr uint64_t kProbe = 0x70726f6265ULL;      // "probe"
inline constexpr uint64_t kInit = 0x696e6974ULL;         // "init"
inline constexpr uint64_t kPretrain = 0x70726574ULL;     // "pret"
}  // namespace stream_tag

}  // namespace taml
