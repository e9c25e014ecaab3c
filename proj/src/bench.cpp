// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "bucketcov/aggregate.hpp"
#include "bucketcov/covariance.hpp"
#include "bucketcov/errors.hpp"
#include "bucketcov/rng.hpp"

namespace bucketcov {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("fit inputs must have equal length");
  const std::size_t n = x.size();
  if (n < 2) throw ContractError("fit needs at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw ContractError("fit abscissae are constant");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy == 0.0) {
    fit.r2 = 1.0;  // exactly constant response, perfectly fit by slope 0
  } else {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = y[i] - (fit.intercept + fit.slope * x[i]);
      ss_res += e * e;
    }
    fit.r2 = 1.0 - ss_res / syy;
  }
  return fit;
}

BenchResult run_benchmark(int users, std::span<const int> day_counts, int bucket_count,
                          std::uint64_t seed) {
  if (users < 2) throw ContractError("benchmark needs at least 2 users");
  if (bucket_count < 2) throw ContractError("bucket count must be at least 2");
  if (day_counts.empty()) throw ContractError("benchmark needs at least one day count");
  int max_days = 0;
  for (int d : day_counts) {
    if (d < 2) throw ContractError("day counts must be at least 2");
    max_days = std::max(max_days, d);
  }

  // One value per user per day, plus a fixed bucket assignment per user.
  const auto n = static_cast<std::size_t>(users);
  std::vector<std::vector<double>> values(static_cast<std::size_t>(max_days));
  SplitMix64 value_rng(derive_stream(seed, 1));
  NormalSampler normal;
  for (auto& day : values) {
    day.resize(n);
    for (double& v : day) v = 10.0 + 5.0 * normal(value_rng);
  }
  std::vector<std::uint32_t> bucket_of(n);
  SplitMix64 rng(derive_stream(seed, 2));
  for (auto& b : bucket_of) {
    b = static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(bucket_count)));
  }

  BenchResult result;
  for (int d : day_counts) {
    BenchPoint point;
    point.days = d;

    auto t0 = Clock::now();
    std::vector<BucketAggregate> aggs(static_cast<std::size_t>(d));
    for (int day = 0; day < d; ++day) {
      auto& agg = aggs[static_cast<std::size_t>(day)];
      agg.bucket_count = bucket_count;
      agg.sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
      agg.counts.assign(static_cast<std::size_t>(bucket_count), 0);
      const auto& day_values = values[static_cast<std::size_t>(day)];
      for (std::size_t u = 0; u < n; ++u) {
        agg.sums[bucket_of[u]] += day_values[u];
        ++agg.counts[bucket_of[u]];
        ++point.bucket_touches;
      }
    }
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) {
        (void)estimate_cov_bucket(aggs[static_cast<std::size_t>(i)],
                                  aggs[static_cast<std::size_t>(j)], 0.0);
      }
    }
    point.bucket_seconds = seconds_since(t0);

    t0 = Clock::now();
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) {
        const auto& xi = values[static_cast<std::size_t>(i)];
        const auto& xj = values[static_cast<std::size_t>(j)];
        double mi = 0.0, mj = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
          mi += xi[u];
          mj += xj[u];
          point.join_touches += 2;
        }
        mi /= static_cast<double>(n);
        mj /= static_cast<double>(n);
        double acc = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
          acc += (xi[u] - mi) * (xj[u] - mj);
          point.join_touches += 2;
        }
        (void)acc;
        ++point.join_pairs;
      }
    }
    point.join_seconds = seconds_since(t0);
    result.points.push_back(point);
  }

  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& p : result.points) {
    xs.push_back(static_cast<double>(p.days));
    ys.push_back(static_cast<double>(p.bucket_touches));
  }
  if (xs.size() >= 2) result.bucket_touch_fit = linear_fit(xs, ys);
  return result;
}

}  // namespace bucketcov
