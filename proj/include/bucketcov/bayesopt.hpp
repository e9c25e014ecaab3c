// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

namespace bucketcov {

inline constexpr int kBoDims = 6;
using Point = std::array<double, kBoDims>;

// Six-dimensional Hartmann test function on [0,1]^6; global minimum
// -3.322368 near (0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573).
double hartmann6(const Point& x);

// Composite objective: metric one is 2 * hartmann6, metric two is hartmann6,
// and the tuner minimizes their sum.
double composite_objective(const Point& x);

// Low-discrepancy point from the Halton sequence (bases 2,3,5,7,11,13),
// 1-indexed internally so index 0 is already nondegenerate.
Point halton_point(std::uint64_t index);

// Noise covariance of the two metric means used by the simulated A/B
// evaluations (positively and negatively correlated variants).
Eigen::Matrix2d positive_noise_cov();
Eigen::Matrix2d negative_noise_cov();

struct Evaluation {
  double value = 0.0;       // observed sum of the two metric means
  double noise_var = 0.0;   // variance attached to the observation
  double metric_cov = 0.0;  // bucket-estimated per-sample cross-metric covariance
};

// Simulates one A/B measurement at x: draws `samples` user observations per
// metric with per-sample covariance samples * noise_cov (so the metric means
// have covariance noise_cov), buckets them, and reports the summed means.
// When use_cov_term is set the observation variance includes twice the
// bucket-estimated covariance of the means; otherwise only the two variance
// terms enter. The variance is floored at a small positive value.
Evaluation noisy_evaluate(const Point& x, const Eigen::Matrix2d& noise_cov, int samples,
                          int bucket_count, bool use_cov_term, std::uint64_t stream);

// Gaussian process with a constant mean, squared-exponential ARD kernel and
// per-observation noise, fitted by coordinate ascent on the log marginal
// likelihood plus lognormal hyperpriors.
class GaussianProcess {
 public:
  GaussianProcess(std::vector<Point> x, std::vector<double> y,
                  std::vector<double> noise_var);

  struct Posterior {
    double mean = 0.0;
    double var = 0.0;
  };
  Posterior posterior(const Point& x) const;

  double signal_sd() const { return sf_; }
  const std::array<double, kBoDims>& lengthscales() const { return ls_; }

 private:
  double fit_objective(double sf, const std::array<double, kBoDims>& ls,
                       Eigen::LLT<Eigen::MatrixXd>* llt) const;
  void finalize();
  Eigen::VectorXd kernel_column(const Point& x) const;

  std::vector<Point> x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd noise_var_;
  double mean_ = 0.0;
  double sd0_ = 1.0;
  double sf_ = 1.0;
  std::array<double, kBoDims> ls_{};
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

struct BoConfig {
  int iterations = 50;       // total evaluations including the initial design
  int init_points = 12;
  int samples_per_eval = 10000;
  int bucket_count = 100;
  bool noiseless = false;    // evaluate the objective exactly (no noise model)
  bool use_cov_term = true;  // include the covariance term in the noise model
  Eigen::Matrix2d noise_cov = positive_noise_cov();
  int pool_size = 4096;      // screened acquisition candidates per iteration
  int refine_count = 20;     // top candidates polished by pattern search
};

struct BoTrace {
  std::vector<Point> points;        // all evaluated inputs, in order
  std::vector<double> observed;     // observations fed to the model
  std::vector<double> best_true;    // running true best after each evaluation
  double final_best_true = 0.0;
};

// Sequential model-based minimization of the composite objective.
BoTrace bo_minimize(const BoConfig& cfg, std::uint64_t seed);

}  // namespace bucketcov
