// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/cuped.hpp"

#include <cmath>
#include <cstddef>

#include "bucketcov/covariance.hpp"
#include "bucketcov/errors.hpp"
#include "bucketcov/rng.hpp"

namespace bucketcov {
namespace {

constexpr std::uint64_t kPairSalt = 0x70616972656a6f62ULL;
constexpr std::uint64_t kBucketSalt = 0x6275636b65746373ULL;

}  // namespace

double optimal_beta(const BucketAggregate& target, const BucketAggregate& covariate,
                    double correction_ratio) {
  const double cov = estimate_cov_bucket(target, covariate, correction_ratio).value;
  const double var = estimate_cov_bucket(covariate, covariate, correction_ratio).value;
  if (!(var > 0.0)) throw ContractError("covariate variance estimate is not positive");
  return cov / var;
}

CupedResult apply_cuped(double delta, double covariate_delta,
                        double covariate_expectation, double beta) {
  CupedResult out;
  out.beta = beta;
  out.adjusted_delta = delta - beta * (covariate_delta - covariate_expectation);
  return out;
}

std::vector<BetaAccuracyCell> beta_accuracy_experiment(std::span<const double> rhos,
                                                       std::span<const int> bucket_counts,
                                                       int users, int reps,
                                                       std::uint64_t seed) {
  if (users < 2) throw ContractError("need at least 2 users per repetition");
  if (reps < 1) throw ContractError("need at least 1 repetition");
  for (double rho : rhos) {
    if (!(rho > 0.0) || !(rho < 1.0)) throw ContractError("rho must lie in (0, 1)");
  }
  for (int b : bucket_counts) {
    if (b < 2) throw ContractError("bucket counts must be at least 2");
  }

  std::vector<BetaAccuracyCell> cells;
  cells.reserve(rhos.size() * bucket_counts.size());
  std::uint64_t cell_index = 0;
  for (double rho : rhos) {
    const double beta = 2.0 * rho / (1.0 + rho * rho);
    for (int b : bucket_counts) {
      const std::uint64_t cell_seed = derive_stream(seed, cell_index++);
      const std::uint64_t pair_base = derive_stream(cell_seed, kPairSalt);
      const std::uint64_t bucket_base = derive_stream(cell_seed, kBucketSalt);
      double err_sum = 0.0;
      BucketAggregate tgt;
      BucketAggregate cov;
      for (int r = 0; r < reps; ++r) {
        SplitMix64 pair_rng(derive_stream(pair_base, static_cast<std::uint64_t>(r)));
        NormalSampler normal;
        SplitMix64 assign(derive_stream(bucket_base, static_cast<std::uint64_t>(r)));
        tgt.bucket_count = b;
        cov.bucket_count = b;
        tgt.sums.assign(static_cast<std::size_t>(b), 0.0);
        tgt.counts.assign(static_cast<std::size_t>(b), 0);
        cov.sums.assign(static_cast<std::size_t>(b), 0.0);
        cov.counts.assign(static_cast<std::size_t>(b), 0);
        for (int u = 0; u < users; ++u) {
          const double z1 = normal(pair_rng);
          const double z2 = normal(pair_rng);
          const auto bucket =
              static_cast<std::size_t>(assign.below(static_cast<std::uint64_t>(b)));
          tgt.sums[bucket] += z1 + rho * z2;
          ++tgt.counts[bucket];
          cov.sums[bucket] += z2 + rho * z1;
          ++cov.counts[bucket];
        }
        const double beta_hat = optimal_beta(tgt, cov, 0.0);
        err_sum += std::abs(beta_hat - beta) / beta;
      }
      BetaAccuracyCell cell;
      cell.rho = rho;
      cell.bucket_count = b;
      cell.target_beta = beta;
      cell.mean_rel_error = err_sum / static_cast<double>(reps);
      cell.reps = reps;
      cells.push_back(cell);
    }
  }
  return cells;
}

VarianceReductionResult variance_reduction_experiment(double rho, int users_per_group,
                                                      int reps, std::uint64_t seed) {
  if (!(rho > -1.0) || !(rho < 1.0)) throw ContractError("rho must lie in (-1, 1)");
  if (users_per_group < 2) throw ContractError("need at least 2 users per group");
  if (reps < 2) throw ContractError("need at least 2 repetitions");

  // Unit-variance bivariate normal: target = z1, covariate = rho z1 +
  // sqrt(1 - rho^2) z2, so the optimal coefficient is rho itself.
  const double beta = rho;
  const double load = std::sqrt(1.0 - rho * rho);
  std::vector<double> raw_deltas;
  std::vector<double> adj_deltas;
  raw_deltas.reserve(static_cast<std::size_t>(reps));
  adj_deltas.reserve(static_cast<std::size_t>(reps));
  const std::uint64_t base = derive_stream(seed, kPairSalt);
  for (int r = 0; r < reps; ++r) {
    SplitMix64 rng(derive_stream(base, static_cast<std::uint64_t>(r)));
    NormalSampler normal;
    double t_sum[2] = {0.0, 0.0};
    double c_sum[2] = {0.0, 0.0};
    for (int g = 0; g < 2; ++g) {
      for (int u = 0; u < users_per_group; ++u) {
        const double z1 = normal(rng);
        const double z2 = normal(rng);
        t_sum[g] += z1;
        c_sum[g] += rho * z1 + load * z2;
      }
    }
    const double dn = static_cast<double>(users_per_group);
    const double delta = t_sum[1] / dn - t_sum[0] / dn;
    const double cov_delta = c_sum[1] / dn - c_sum[0] / dn;
    raw_deltas.push_back(delta);
    adj_deltas.push_back(apply_cuped(delta, cov_delta, 0.0, beta).adjusted_delta);
  }

  auto variance = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
      const double d = x - m;
      ss += d * d;
    }
    return ss / static_cast<double>(v.size() - 1);
  };

  VarianceReductionResult out;
  out.rho = rho;
  out.beta = beta;
  out.raw_var = variance(raw_deltas);
  out.adjusted_var = variance(adj_deltas);
  if (!(out.raw_var > 0.0)) throw ContractError("raw delta variance is not positive");
  out.ratio = out.adjusted_var / out.raw_var;
  out.reps = reps;
  return out;
}

}  // namespace bucketcov
