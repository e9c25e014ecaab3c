// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bucketcov/aggregate.hpp"
#include "bucketcov/population.hpp"

namespace bucketcov {

// Sample covariance over buckets with the 1/(B-1) normalization. x and y must
// have the same length B >= 2.
double bucket_sample_cov(std::span<const double> x, std::span<const double> y);

// First-order covariance of the ratios a/b and c/d given covariances of the
// four totals: cov_ac/(b d) + a c cov_bd/(b^2 d^2) - c cov_ad/(b d^2)
// - a cov_bc/(b^2 d). b and d must be nonzero.
double delta_ratio_cov(double cov_ac, double cov_bd, double cov_ad, double cov_bc,
                       double a, double b, double c, double d);

struct CovEstimate {
  double value = 0.0;
  std::string method;
  int bucket_count = 0;
  double correction_ratio = 0.0;
};

// Covariance of two per-user averages estimated from bucket aggregates alone.
// With S/N the per-bucket sum and count series, S./N. their totals, K the
// bucket sample covariance and C = 1 - correction_ratio:
//
//   C * B * [ K(Sx,Sy)/(Nx Ny) + Sx Sy K(Nx,Ny)/(Nx^2 Ny^2)
//             - Sy K(Sx,Ny)/(Nx Ny^2) - Sx K(Sy,Nx)/(Nx^2 Ny) ]
//
// correction_ratio is the group assignment probability and must lie in
// [0, 1). Both aggregates must share the bucket count and have nonzero total
// counts.
CovEstimate estimate_cov_bucket(const BucketAggregate& x, const BucketAggregate& y,
                                double correction_ratio);

// Baseline that joins users observed in both periods and scales their paired
// sample covariance by 1/n_common. Biased upward when missingness follows
// activeness.
double estimate_cov_naive(std::span<const double> x, std::span<const double> y);

// Per-user totals over the augmented user set (every user assigned to the
// group, with zeros for unobserved periods).
struct AugmentedUser {
  double sum_x = 0.0;
  double cnt_x = 0.0;
  double sum_y = 0.0;
  double cnt_y = 0.0;
};

// Baseline from the central limit theorem on per-user 4-vectors: user-level
// sample covariances scaled by the user count give covariances of totals,
// then delta_ratio_cov maps totals to averages. Does not correct for
// without-replacement sampling, hence biased by about 1/(1 - ratio).
double estimate_cov_dataaug(std::span<const AugmentedUser> users);

struct OracleEstimate {
  double value = 0.0;
  double se = 0.0;       // large-sample standard error of the sample covariance
  int reps_used = 0;
  int discarded = 0;     // repetitions with an empty observed set
};

// Ground-truth covariance of the two per-period averages by direct
// simulation: repeatedly re-draws the experiment group over the fixed
// population and takes the sample covariance of the resulting averages.
// Group membership uses explicit Bernoulli draws, not the diversion hash, so
// repetitions are independent. Discarding more than 1% of repetitions is an
// error.
OracleEstimate oracle_cov(const SyntheticPopulation& pop, Eigen::Index col_x,
                          Eigen::Index col_y, double ratio, int reps,
                          std::uint64_t seed);

Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& m, double* min_eigenvalue_before = nullptr);

struct MatrixEstimate {
  Eigen::MatrixXd raw;        // symmetric, possibly indefinite
  Eigen::MatrixXd repaired;   // eigenvalues clipped below eps = 1e-10 * trace/d
  double min_eigenvalue_before = 0.0;
  bool repair_applied = false;
};

// Pairwise bucket estimates for d aggregates sharing one bucketing.
MatrixEstimate estimate_cov_matrix(std::span<const BucketAggregate> aggregates,
                                   double correction_ratio);

// ---------------------------------------------------------------------------
// Monte Carlo experiment drivers over a fixed synthetic population. Each
// repetition draws group membership (Bernoulli) and a fresh uniform random
// bucketing, then runs the estimators on the realized observations.

struct MethodStats {
  double mean = 0.0;
  double sd = 0.0;
};

struct ComparisonResult {
  OracleEstimate oracle;
  MethodStats naive;
  MethodStats dataaug;
  std::map<int, MethodStats> bucket;  // keyed by bucket count
  int reps = 0;
  double ratio = 0.0;
};

// Compares the bucket estimator against the naive and data-augmentation
// baselines on one population at one group ratio.
ComparisonResult compare_estimators(const SyntheticPopulation& pop, double ratio,
                                    std::span<const int> bucket_counts,
                                    int estimator_reps, int oracle_reps,
                                    std::uint64_t seed);

struct BiasFactorRow {
  double ratio = 0.0;
  double truth = 0.0;      // oracle value
  double truth_se = 0.0;
  double dataaug_mean = 0.0;
  double dataaug_sd = 0.0;
  double bias_factor = 0.0;  // dataaug_mean * (1 - ratio) / truth
};

// Sweeps group ratios and measures the data-augmentation baseline's upward
// bias against the simulation oracle.
std::vector<BiasFactorRow> dataaug_bias_experiment(const SyntheticPopulation& pop,
                                                   std::span<const double> ratios,
                                                   int estimator_reps, int oracle_reps,
                                                   std::uint64_t seed);

struct IdentityCheck {
  double lhs = 0.0;   // Monte Carlo mean of the bucket-side statistic
  double rhs = 0.0;   // reference value
  double se = 0.0;    // standard error of (lhs - rhs)
  double z = 0.0;     // (lhs - rhs) / se
  int reps = 0;
};

// Checks that the scaled bucket covariance B * (1 - ratio) * K(Sx, Sy) is an
// unbiased estimate of the covariance of the period totals across repeated
// group draws of a fixed population.
IdentityCheck check_sum_cov_unbiasedness(const SyntheticPopulation& pop, double ratio,
                                         int bucket_count, int reps, std::uint64_t seed);

// Checks the closed form of E[K(Sx, Sy)] over group and bucket randomness:
// (ratio / B) * sum over users of the product of observed period values.
IdentityCheck check_bucket_cov_expectation(const SyntheticPopulation& pop, double ratio,
                                           int bucket_count, int reps, std::uint64_t seed);

}  // namespace bucketcov
