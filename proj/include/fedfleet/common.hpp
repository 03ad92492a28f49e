#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedfleet {

// Error taxonomy.  config_error: bad user input (files, CLI, config values).
// contract_error: a caller violated an API precondition; always a bug.
// numeric_error: non-finite values or failed convergence at runtime.
// io_error: filesystem / serialization failures.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 single step; used to decorrelate derived seed streams.
std::uint64_t splitmix64(std::uint64_t x);

// Child seed for logical stream `stream` of `base`.  Different streams give
// statistically independent generators; same inputs always give the same seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Deterministic RNG used everywhere instead of raw std distributions, because
// libstdc++/libc++ disagree on distribution algorithms and we promise
// bit-reproducible runs.  Draw order is part of the contract.
class rng {
 public:
  explicit rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double gaussian();

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  // Uniform index in [0, n).  Requires n > 0.
  std::size_t index(std::size_t n);

  // Fisher-Yates; identical permutation for identical seed/state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Build/version identifier (git describe or fallback).
std::string version_string();

// True if every element is finite.
bool all_finite(const std::vector<double>& v);

}  // namespace fedfleet
