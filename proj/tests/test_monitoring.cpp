// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/monitoring.hpp"

#include <doctest.h>

#include <cmath>

#include "bucketcov/errors.hpp"
#include "bucketcov/rng.hpp"

using namespace bucketcov;

namespace {

MonitorConfig small_config() {
  MonitorConfig cfg;
  cfg.days = 5;
  cfg.users = 200;
  cfg.bucket_count = 50;
  cfg.mu0 = 0.0;
  cfg.mu1 = 0.3;
  cfg.day_var = 2.0;
  cfg.day_corr = 0.4;
  cfg.threshold = 9.0;
  return cfg;
}

Eigen::MatrixXd random_spd(int d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  NormalSampler normal;
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = normal(rng);
  }
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("compound symmetric matrices have the requested structure") {
  const auto m = compound_symmetric(3, 4.0, 0.25);
  CHECK(m(0, 0) == 4.0);
  CHECK(m(1, 1) == 4.0);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(2, 0) == 1.0);
  const auto one = compound_symmetric(1, 2.0, 0.0);
  CHECK(one(0, 0) == 2.0);
  CHECK_THROWS_AS(compound_symmetric(0, 1.0, 0.0), ContractError);
  CHECK_THROWS_AS(compound_symmetric(2, -1.0, 0.0), ContractError);
  CHECK_THROWS_AS(compound_symmetric(2, 1.0, 1.0), ContractError);
}

TEST_CASE("scalar evidence matches the closed form") {
  Eigen::VectorXd x(1);
  x << 0.3;
  Eigen::MatrixXd sigma(1, 1);
  sigma << 1.0;
  // (mu1 - mu0) * (x - midpoint) / var = 0.3 * 0.15.
  CHECK(path_log_likelihood_ratio(x, sigma, 0.0, 0.3) ==
        doctest::Approx(0.045).epsilon(1e-12));
}

TEST_CASE("a path at the midpoint carries no evidence") {
  const int d = 6;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(d, 0.15);
  const auto sigma = compound_symmetric(d, 1.3, 0.5);
  CHECK(std::fabs(path_log_likelihood_ratio(x, sigma, 0.0, 0.3)) < 1e-12);
}

TEST_CASE("evidence equals the direct gaussian likelihood quotient") {
  const int d = 8;
  const auto sigma = random_spd(d, 3);
  SplitMix64 rng(4);
  NormalSampler normal;
  Eigen::VectorXd x(d);
  for (int i = 0; i < d; ++i) x[i] = 0.2 + 0.5 * normal(rng);

  const double mu0 = 0.0, mu1 = 0.3;
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const Eigen::VectorXd r0 = x - Eigen::VectorXd::Constant(d, mu0);
  const Eigen::VectorXd r1 = x - Eigen::VectorXd::Constant(d, mu1);
  const double direct = 0.5 * (r0.dot(llt.solve(r0)) - r1.dot(llt.solve(r1)));

  CHECK(path_log_likelihood_ratio(x, sigma, mu0, mu1) ==
        doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("evidence at the alternative mean is nonnegative for every prefix") {
  const auto cfg = small_config();
  const auto sigma = compound_symmetric(cfg.days, cfg.day_var, cfg.day_corr);
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(cfg.days, cfg.mu1);
  for (int day = 1; day <= cfg.days; ++day) {
    CHECK(path_log_likelihood_ratio(x.head(day), sigma.topLeftCorner(day, day), cfg.mu0,
                                    cfg.mu1) >= 0.0);
  }
}

TEST_CASE("monitor log evidence agrees with per-prefix recomputation") {
  const auto cfg = small_config();
  const Eigen::MatrixXd sigma = compound_symmetric(cfg.days, cfg.day_var, cfg.day_corr) /
                                static_cast<double>(cfg.users);
  SplitMix64 rng(9);
  NormalSampler normal;
  Eigen::VectorXd x(cfg.days);
  for (int i = 0; i < cfg.days; ++i) x[i] = 0.1 * normal(rng);

  MonitorConfig open_ended = cfg;
  open_ended.threshold = 1e18;  // never stop, keep the whole path
  const auto outcome = run_monitor(x, sigma, open_ended);
  CHECK_FALSE(outcome.rejected);
  CHECK(outcome.stopped_day == 0);
  REQUIRE(outcome.log_bf.size() == static_cast<std::size_t>(cfg.days));
  for (int day = 1; day <= cfg.days; ++day) {
    const double direct = path_log_likelihood_ratio(
        x.head(day), sigma.topLeftCorner(day, day), cfg.mu0, cfg.mu1);
    CHECK(outcome.log_bf[static_cast<std::size_t>(day - 1)] ==
          doctest::Approx(direct).epsilon(1e-9));
  }
}

TEST_CASE("a midpoint path never rejects") {
  const auto cfg = small_config();
  const auto sigma = compound_symmetric(cfg.days, cfg.day_var, cfg.day_corr);
  const Eigen::VectorXd mid = Eigen::VectorXd::Constant(cfg.days, 0.15);
  const auto outcome = run_monitor(mid, sigma, cfg);
  CHECK_FALSE(outcome.rejected);
}

TEST_CASE("the monitor stops early on overwhelming evidence") {
  auto cfg = small_config();
  cfg.day_var = 0.0001;  // tiny noise: day one is already decisive
  const auto sigma = compound_symmetric(cfg.days, cfg.day_var, cfg.day_corr);
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(cfg.days, cfg.mu1);
  const auto outcome = run_monitor(x, sigma, cfg);
  CHECK(outcome.rejected);
  CHECK(outcome.stopped_day == 1);
  CHECK(outcome.log_bf.size() == 1);
}

TEST_CASE("equal hypothesis means are rejected as a configuration") {
  auto cfg = small_config();
  cfg.mu1 = cfg.mu0;
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(cfg.days);
  const auto sigma = compound_symmetric(cfg.days, 1.0, 0.0);
  CHECK_THROWS_AS(run_monitor(x, sigma, cfg), ContractError);
}

TEST_CASE("nearly singular covariances still produce finite evidence") {
  const int d = 4;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(d, d, 1.0);  // rank one
  Eigen::VectorXd x = Eigen::VectorXd::Constant(d, 0.4);
  const double v = path_log_likelihood_ratio(x, sigma, 0.0, 0.3);
  CHECK(std::isfinite(v));
}

TEST_CASE("the error study needs at least one hundred runs per hypothesis") {
  const auto cfg = small_config();
  CHECK_THROWS_AS(fdr_experiment(cfg, 99, 1), ContractError);
}

TEST_CASE("an unreachable threshold yields the zero-rejection flag") {
  auto cfg = small_config();
  cfg.threshold = 1e300;
  cfg.mode = CovarianceMode::kIndependent;
  const auto res = fdr_experiment(cfg, 100, 3);
  CHECK(res.zero_rejections);
  CHECK(res.fdr == 0.0);
  CHECK(res.power == 0.0);
  CHECK(res.rejections_h0 == 0);
  CHECK(res.rejections_h1 == 0);
}

TEST_CASE("the error study produces sane rates in every covariance mode") {
  auto cfg = small_config();
  for (const auto mode : {CovarianceMode::kIndependent, CovarianceMode::kTrueCov,
                          CovarianceMode::kEstimatedCov}) {
    cfg.mode = mode;
    const auto res = fdr_experiment(cfg, 120, 7);
    CHECK(res.runs_per_hypothesis == 120);
    CHECK(res.fdr >= 0.0);
    CHECK(res.fdr <= 1.0);
    CHECK(res.power >= 0.0);
    CHECK(res.power <= 1.0);
    CHECK(res.invalid_runs == 0);
    if (res.rejections_h1 > 0) {
      CHECK(res.mean_stop_day >= 1.0);
      CHECK(res.mean_stop_day <= cfg.days);
    }
  }
}

TEST_CASE("the true-covariance monitor is more conservative than independence") {
  // Ignoring positive cross-day correlation overstates the evidence, so the
  // independence model must reject at least as often under the null.
  auto cfg = small_config();
  cfg.days = 10;
  cfg.users = 500;
  cfg.day_var = 30.0;
  cfg.mode = CovarianceMode::kIndependent;
  const auto indep = fdr_experiment(cfg, 300, 11);
  cfg.mode = CovarianceMode::kTrueCov;
  const auto truecov = fdr_experiment(cfg, 300, 11);
  CHECK(indep.rejections_h0 >= truecov.rejections_h0);
}
