#include "fedfleet/common.hpp"

#include <cmath>
#include <numbers>

namespace fedfleet {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // Two mixing rounds so that (base, stream) and (base + 1, stream - 1)
  // do not collide the way a plain sum would.
  return splitmix64(splitmix64(base) ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
}

double rng::gaussian() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t rng::index(std::size_t n) {
  if (n == 0) throw contract_error("rng::index: n must be positive");
  return static_cast<std::size_t>(next_u64() % n);
}

std::string version_string() {
#ifdef FEDFLEET_VERSION_STRING
  return FEDFLEET_VERSION_STRING;
#else
  return "v0.0.0-unknown";
#endif
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace fedfleet
