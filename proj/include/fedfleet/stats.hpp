#pragma once

#include <span>

#include "fedfleet/common.hpp"

namespace fedfleet::stats {

struct wilcoxon_result {
  std::size_t n = 0;    // pairs remaining after zero-differences are dropped
  double w = 0.0;       // min(W+, W-) signed-rank statistic
  double w_plus = 0.0;  // rank sum of positive differences
  double p = 0.0;       // two-sided p-value
  bool exact = false;   // enumeration (n <= 20) vs normal approximation
};

// Paired two-sided Wilcoxon signed-rank test of a vs b.  Zero differences
// are dropped; tied |differences| get mid-ranks.  For n <= 20 the p-value is
// exact: all 2^n sign assignments are enumerated (mid-ranks are doubled so
// the enumeration stays in integers).  Above 20 a normal approximation with
// tie correction is used (no continuity correction).  Throws contract_error
// on length mismatch / empty input and numeric_error when every difference
// is zero (the test is undefined).
wilcoxon_result wilcoxon_signed_rank(std::span<const double> a,
                                     std::span<const double> b);

}  // namespace fedfleet::stats
