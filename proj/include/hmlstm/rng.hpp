#ifndef HMLSTM_RNG_HPP
#define HMLSTM_RNG_HPP

#include <cstdint>
#include <random>

namespace hmlstm {

// Deterministic random stream. All draws are hand-mapped from the raw engine
// output so that a fixed seed reproduces bit-identical sequences across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  long uniform_index(long n) { return static_cast<long>(uniform() * static_cast<double>(n)) % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent stream (e.g. per evaluation pass).
  Rng fork(std::uint64_t salt) {
    return Rng(eng_() ^ (salt * 0x9e3779b97f4a7c15ull));
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace hmlstm

#endif
