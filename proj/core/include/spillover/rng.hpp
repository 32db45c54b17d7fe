#pragma once

#include <array>
#include <cstdint>

namespace spill {

// Philox4x32-10 counter-based generator. The output depends only on
// (key, counter), so draws can be evaluated in any order or in parallel.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter counter, Key key);
};

// Domain separation tags so different consumers of one seed never collide.
enum class RngPurpose : std::uint64_t {
  kNegativeSample = 1,
  kBootstrap = 2,
  kVisits = 3,
  kWorld = 4,
  kPartition = 5,
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Single uniform in [0, 1) for one (seed, purpose, stream) cell.
double counter_uniform(std::uint64_t seed, RngPurpose purpose, std::uint64_t stream);

// Sequential stream over a Philox counter. Satisfies
// UniformRandomBitGenerator, but the distribution helpers below are
// implemented here so results do not depend on the standard library.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, RngPurpose purpose, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()();

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  std::int64_t poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace spill
