// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bucketcov {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares y = slope * x + intercept with the usual R^2.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

// Work accounting for computing all pairwise day covariances, comparing the
// bucket pipeline (one aggregation pass per day, then bucket-level math)
// against per-pair user joins. "Touches" count record reads.
struct BenchPoint {
  int days = 0;
  std::int64_t bucket_touches = 0;
  std::int64_t join_touches = 0;
  std::int64_t join_pairs = 0;
  double bucket_seconds = 0.0;
  double join_seconds = 0.0;
};

struct BenchResult {
  std::vector<BenchPoint> points;
  LinearFit bucket_touch_fit;  // touches versus day count
};

BenchResult run_benchmark(int users, std::span<const int> day_counts, int bucket_count,
                          std::uint64_t seed);

}  // namespace bucketcov
