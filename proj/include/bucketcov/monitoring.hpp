// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace bucketcov {

// Which covariance model the sequential monitor plugs into its likelihoods.
enum class CovarianceMode {
  kIndependent,   // diagonal: true per-day variance, zero cross-day terms
  kTrueCov,       // the data-generating day covariance
  kEstimatedCov,  // bucket-estimated from the run's own panel
};

struct MonitorConfig {
  int days = 30;
  int users = 4000;
  int bucket_count = 300;   // used by kEstimatedCov
  double mu0 = 0.0;         // per-day mean under the null
  double mu1 = 0.3;         // per-day mean under the alternative
  double day_var = 130.0;   // per-user per-day variance
  double day_corr = 0.5;    // per-user cross-day correlation
  double threshold = 9.0;   // posterior-odds stopping threshold
  double prior_odds = 1.0;
  CovarianceMode mode = CovarianceMode::kTrueCov;
};

// var on the diagonal, var * corr everywhere else.
Eigen::MatrixXd compound_symmetric(int dim, double var, double corr);

// Log likelihood ratio of two equal-covariance Gaussian models for the path
// x: means mu1 * 1 versus mu0 * 1, shared covariance sigma. Eigenvalues of
// sigma are clipped from below before solving so nearly singular estimates
// stay usable.
double path_log_likelihood_ratio(const Eigen::VectorXd& x, const Eigen::MatrixXd& sigma,
                                 double mu0, double mu1);

struct MonitorOutcome {
  int stopped_day = 0;   // 1-based; 0 when the monitor never stops
  bool rejected = false;
  std::vector<double> log_bf;  // one entry per day observed before stopping
};

// Walks the day-average path, recomputing the Bayes factor on the leading
// days each evening, and stops the first time prior_odds * BF exceeds the
// threshold. sigma_avg is the day covariance of the averages (user-level
// covariance over the group size) and only its leading blocks are used.
MonitorOutcome run_monitor(const Eigen::VectorXd& day_averages,
                           const Eigen::MatrixXd& sigma_avg, const MonitorConfig& cfg);

struct FdrResult {
  double fdr = 0.0;          // null rejections / all rejections
  double power = 0.0;        // alternative rejections / valid alternative runs
  double mean_stop_day = 0.0;  // over rejecting alternative runs
  int rejections_h0 = 0;
  int rejections_h1 = 0;
  int runs_per_hypothesis = 0;
  int invalid_runs = 0;          // covariance estimation failed; excluded
  bool zero_rejections = false;  // no run rejected, FDR undefined
};

// Simulates runs_per_hypothesis experiments under each hypothesis and scores
// the monitor configured by cfg. Runs whose covariance estimation fails are
// excluded from the rates and tallied in invalid_runs. Requires at least 100
// runs per hypothesis.
FdrResult fdr_experiment(const MonitorConfig& cfg, int runs_per_hypothesis,
                         std::uint64_t seed);

}  // namespace bucketcov
