// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bucketcov/record.hpp"

namespace bucketcov {

// Specification of a synthetic population whose columns are metric-periods
// (for the two-period experiments, column 0 is the current period and column
// 1 the preceding one).
struct PopulationSpec {
  std::size_t user_count = 10000;
  std::vector<double> mean;     // one entry per column
  Eigen::MatrixXd covariance;   // column covariance, square, PSD
  // When true, an observation indicator per (user, column) is drawn with
  // success probability max(0.5, activeness); when false every value is
  // observed.
  bool missingness = true;

  static PopulationSpec defaults();
};

struct SyntheticPopulation {
  std::vector<std::string> user_ids;
  Eigen::MatrixXd values;       // user_count x columns
  Eigen::MatrixXd activeness;   // rank / user_count per column, in [0, 1)
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> observed;

  Eigen::Index users() const { return values.rows(); }
  Eigen::Index columns() const { return values.cols(); }
};

// Deterministic generation: identical (spec, seed) pairs produce identical
// populations. Value and indicator draws use independent per-user substreams.
SyntheticPopulation generate_population(const PopulationSpec& spec, std::uint64_t seed);

// Success probability of the observation indicator at activeness e.
inline double observation_probability(double activeness) {
  return activeness > 0.5 ? activeness : 0.5;
}

// Emits one record per observed (user, column) for users that the diversion
// hash places in the experiment group at `ratio`. Column c is reported as
// metric "m", period "p<c>", group "g1".
std::vector<ObservationRecord> sample_experiment(const SyntheticPopulation& pop,
                                                 double ratio,
                                                 std::uint64_t diversion_seed);

// Per-user day vectors drawn from N(mu * 1, day_cov); one row per user.
Eigen::MatrixXd generate_daily_panel(std::size_t user_count, double mu,
                                     const Eigen::MatrixXd& day_cov,
                                     std::uint64_t seed);

}  // namespace bucketcov
