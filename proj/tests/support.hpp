// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries: the committed data directory and a
// chi-square tail probability for the distributional checks.
#pragma once

#include <cmath>
#include <cstdlib>
#include <span>
#include <string>

namespace testsupport {

inline std::string data_dir() {
#ifdef BUCKETCOV_DATA_DIR
  return BUCKETCOV_DATA_DIR;
#else
  return "data";
#endif
}

inline std::string data_file(const std::string& name) { return data_dir() + "/" + name; }

// Regularized upper incomplete gamma Q(a, x) by series / continued fraction
// (standard Lentz evaluation). Good to ~1e-10 for the moderate a used here.
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) return std::nan("");
  if (x == 0.0) return 1.0;
  const double log_prefix = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    // P(a, x) as a rising series, then Q = 1 - P.
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
    }
    return 1.0 - sum * std::exp(log_prefix);
  }
  // Continued fraction for Q(a, x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-15) break;
  }
  return h * std::exp(log_prefix);
}

// Survival function of the chi-square distribution with dof degrees.
inline double chi2_sf(double stat, int dof) {
  return gamma_q(0.5 * static_cast<double>(dof), 0.5 * stat);
}

// Pearson statistic for observed counts against equal expected counts.
inline double chi2_uniform_stat(std::span<const long> counts, double total) {
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0.0;
  for (const long c : counts) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return stat;
}

}  // namespace testsupport
