// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bucketcov/aggregate.hpp"

namespace bucketcov {

// Regression coefficient for control-variate adjustment, computed entirely
// from bucket aggregates: cov(target, covariate) / var(covariate), both via
// the bucket estimator. The covariate variance estimate must be positive.
double optimal_beta(const BucketAggregate& target, const BucketAggregate& covariate,
                    double correction_ratio);

struct CupedResult {
  double adjusted_delta = 0.0;
  double beta = 0.0;
};

// Control-variate adjustment of a treatment-effect estimate:
// adjusted = delta - beta * (covariate_delta - covariate_expectation).
CupedResult apply_cuped(double delta, double covariate_delta,
                        double covariate_expectation, double beta);

// ---------------------------------------------------------------------------
// Accuracy of the bucket-based coefficient across correlation strengths and
// bucket counts. Each repetition synthesizes one experiment group with
// cross-loaded unit normals (target = z1 + rho * z2, covariate = z2 + rho *
// z1, so the pair correlation is 2 rho / (1 + rho^2)), buckets it uniformly
// at random, and measures |beta_hat - beta| / beta against the population
// coefficient beta = 2 rho / (1 + rho^2).

struct BetaAccuracyCell {
  double rho = 0.0;
  int bucket_count = 0;
  double target_beta = 0.0;
  double mean_rel_error = 0.0;
  int reps = 0;
};

std::vector<BetaAccuracyCell> beta_accuracy_experiment(std::span<const double> rhos,
                                                       std::span<const int> bucket_counts,
                                                       int users, int reps,
                                                       std::uint64_t seed);

// Variance reduction achieved by the adjustment on a two-group experiment
// whose target and covariate are bivariate normal with correlation rho. The
// adjustment uses the population-optimal coefficient, so the variance ratio
// concentrates on 1 - rho^2.
struct VarianceReductionResult {
  double rho = 0.0;
  double beta = 0.0;
  double raw_var = 0.0;
  double adjusted_var = 0.0;
  double ratio = 0.0;
  int reps = 0;
};

VarianceReductionResult variance_reduction_experiment(double rho, int users_per_group,
                                                      int reps, std::uint64_t seed);

}  // namespace bucketcov
