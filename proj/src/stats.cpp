#include "fedfleet/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace fedfleet::stats {

namespace {

// Mid-ranks of |d|, doubled so ties of .5 stay integral.
std::vector<std::uint64_t> doubled_ranks(const std::vector<double>& absd) {
  const std::size_t n = absd.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t x, std::size_t y) { return absd[x] < absd[y]; });

  std::vector<std::uint64_t> rank2(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && absd[idx[j + 1]] == absd[idx[i]]) ++j;
    // positions i..j (0-based) share the mid-rank ((i+1)+(j+1))/2;
    // doubled: (i + j + 2).
    const std::uint64_t r2 = static_cast<std::uint64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = r2;
    i = j + 1;
  }
  return rank2;
}

}  // namespace

wilcoxon_result wilcoxon_signed_rank(std::span<const double> a,
                                     std::span<const double> b) {
  if (a.size() != b.size())
    throw contract_error("wilcoxon_signed_rank: length mismatch");
  if (a.empty()) throw contract_error("wilcoxon_signed_rank: empty input");

  std::vector<double> absd;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;  // zero differences carry no sign information
    absd.push_back(std::abs(d));
    positive.push_back(d > 0.0);
  }
  if (absd.empty())
    throw numeric_error("wilcoxon_signed_rank: all differences are zero");

  const std::size_t n = absd.size();
  const auto rank2 = doubled_ranks(absd);

  std::uint64_t total2 = 0, wplus2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (positive[i]) wplus2 += rank2[i];
  }
  const std::uint64_t wminus2 = total2 - wplus2;
  const std::uint64_t whi2 = std::max(wplus2, wminus2);
  const std::uint64_t wlo2 = std::min(wplus2, wminus2);

  wilcoxon_result out;
  out.n = n;
  out.w_plus = static_cast<double>(wplus2) / 2.0;
  out.w = static_cast<double>(wlo2) / 2.0;

  if (n <= 20) {
    // Exact: every sign assignment is equally likely under H0.
    out.exact = true;
    const std::uint64_t assignments = 1ull << n;
    std::uint64_t count = 0;
    for (std::uint64_t mask = 0; mask < assignments; ++mask) {
      std::uint64_t w2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1ull << i)) w2 += rank2[i];
      if (w2 >= whi2 || w2 <= wlo2) ++count;
    }
    out.p = static_cast<double>(count) / static_cast<double>(assignments);
  } else {
    // Normal approximation with tie correction.
    const double dn = static_cast<double>(n);
    const double mean = dn * (dn + 1.0) / 4.0;
    double tie_term = 0.0;
    std::size_t i = 0;
    std::vector<double> sorted(absd);
    std::sort(sorted.begin(), sorted.end());
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0))
      throw numeric_error("wilcoxon_signed_rank: degenerate variance (all ties)");
    const double z = (out.w_plus - mean) / std::sqrt(var);
    out.p = std::erfc(std::abs(z) / std::sqrt(2.0));
    out.exact = false;
  }
  out.p = std::min(out.p, 1.0);
  return out;
}

}  // namespace fedfleet::stats
