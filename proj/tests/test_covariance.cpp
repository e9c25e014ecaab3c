// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/covariance.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

#include "bucketcov/errors.hpp"
#include "bucketcov/rng.hpp"

using namespace bucketcov;

namespace {

BucketAggregate random_aggregate(int buckets, std::uint64_t seed, double mean_count = 20.0) {
  BucketAggregate agg;
  agg.bucket_count = buckets;
  agg.sums.resize(static_cast<std::size_t>(buckets));
  agg.counts.resize(static_cast<std::size_t>(buckets));
  SplitMix64 rng(seed);
  NormalSampler normal;
  for (int b = 0; b < buckets; ++b) {
    const auto c = static_cast<std::int64_t>(mean_count + rng.below(10));
    agg.counts[static_cast<std::size_t>(b)] = c;
    agg.sums[static_cast<std::size_t>(b)] = static_cast<double>(c) * (2.0 + 0.3 * normal(rng));
  }
  return agg;
}

}  // namespace

TEST_CASE("bucket sample covariance matches the textbook formula") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> y = {2.0, 4.0, 5.0, 9.0};
  // Means 2.5 and 5; cross products summed give 11; divided by B-1 = 3.
  CHECK(bucket_sample_cov(x, y) == doctest::Approx(11.0 / 3.0).epsilon(1e-12));
  CHECK(bucket_sample_cov(x, x) == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
  const std::vector<double> c = {3.0, 3.0, 3.0, 3.0};
  CHECK(bucket_sample_cov(c, y) == 0.0);
}

TEST_CASE("bucket sample covariance validates its inputs") {
  const std::vector<double> one = {1.0};
  const std::vector<double> two = {1.0, 2.0};
  const std::vector<double> three = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(bucket_sample_cov(one, one), ContractError);
  CHECK_THROWS_AS(bucket_sample_cov(two, three), ContractError);
}

TEST_CASE("delta ratio covariance is zero when the totals do not co-move") {
  CHECK(delta_ratio_cov(0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0) == 0.0);
  CHECK_THROWS_AS(delta_ratio_cov(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0), ContractError);
  CHECK_THROWS_AS(delta_ratio_cov(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0), ContractError);
}

TEST_CASE("delta ratio covariance linearizes small-noise ratios") {
  // Simulate totals around large centers with known covariances, then compare
  // the formula against the empirical covariance of the two ratios.
  SplitMix64 rng(404);
  NormalSampler normal;
  const double a0 = 500.0, b0 = 100.0, c0 = 300.0, d0 = 80.0;
  const int n = 400000;
  double mx = 0.0, my = 0.0, mxy = 0.0;
  double cov_ac = 0.0, cov_bd = 0.0, cov_ad = 0.0, cov_bc = 0.0;
  std::vector<double> xs(static_cast<std::size_t>(n)), ys(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z1 = normal(rng), z2 = normal(rng), z3 = normal(rng), z4 = normal(rng);
    const double a = a0 + 1.0 * z1;
    const double b = b0 + 0.4 * z2 + 0.2 * z1;
    const double c = c0 + 0.8 * z1 + 0.6 * z3;
    const double d = d0 + 0.3 * z4 + 0.1 * z2;
    cov_ac += (a - a0) * (c - c0);
    cov_bd += (b - b0) * (d - d0);
    cov_ad += (a - a0) * (d - d0);
    cov_bc += (b - b0) * (c - c0);
    xs[static_cast<std::size_t>(i)] = a / b;
    ys[static_cast<std::size_t>(i)] = c / d;
  }
  cov_ac /= n; cov_bd /= n; cov_ad /= n; cov_bc /= n;
  for (int i = 0; i < n; ++i) {
    mx += xs[static_cast<std::size_t>(i)];
    my += ys[static_cast<std::size_t>(i)];
  }
  mx /= n; my /= n;
  for (int i = 0; i < n; ++i) {
    mxy += (xs[static_cast<std::size_t>(i)] - mx) * (ys[static_cast<std::size_t>(i)] - my);
  }
  mxy /= n;
  const double predicted = delta_ratio_cov(cov_ac, cov_bd, cov_ad, cov_bc, a0, b0, c0, d0);
  CHECK(predicted == doctest::Approx(mxy).epsilon(0.02));
}

TEST_CASE("bucket estimator is symmetric in its arguments") {
  const auto x = random_aggregate(64, 1);
  const auto y = random_aggregate(64, 2);
  const auto xy = estimate_cov_bucket(x, y, 0.1);
  const auto yx = estimate_cov_bucket(y, x, 0.1);
  CHECK(xy.value == yx.value);
  CHECK(xy.method == "bucket");
  CHECK(xy.bucket_count == 64);
  CHECK(xy.correction_ratio == 0.1);
}

TEST_CASE("bucket estimator scales linearly with the sums") {
  const auto x = random_aggregate(48, 3);
  const auto y = random_aggregate(48, 4);
  BucketAggregate x2 = x;
  for (double& s : x2.sums) s *= 2.5;
  const double base = estimate_cov_bucket(x, y, 0.0).value;
  const double scaled = estimate_cov_bucket(x2, y, 0.0).value;
  CHECK(scaled == doctest::Approx(2.5 * base).epsilon(1e-12));
}

TEST_CASE("bucket estimator self-covariance never goes negative") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const auto x = random_aggregate(32, seed, 5.0);
    CHECK(estimate_cov_bucket(x, x, 0.2).value >= 0.0);
  }
}

TEST_CASE("correction shrinks the estimate by one minus the ratio") {
  const auto x = random_aggregate(40, 7);
  const auto y = random_aggregate(40, 8);
  const double raw = estimate_cov_bucket(x, y, 0.0).value;
  const double corrected = estimate_cov_bucket(x, y, 0.25).value;
  CHECK(corrected == doctest::Approx(0.75 * raw).epsilon(1e-12));
}

TEST_CASE("bucket estimator validates layout and ratio") {
  const auto x = random_aggregate(16, 1);
  const auto y = random_aggregate(24, 2);
  CHECK_THROWS_AS(estimate_cov_bucket(x, y, 0.0), ContractError);
  const auto z = random_aggregate(16, 3);
  CHECK_THROWS_AS(estimate_cov_bucket(x, z, 1.0), ContractError);
  CHECK_THROWS_AS(estimate_cov_bucket(x, z, -0.1), ContractError);
  BucketAggregate empty = x;
  std::fill(empty.counts.begin(), empty.counts.end(), 0);
  CHECK_THROWS_AS(estimate_cov_bucket(empty, z, 0.0), ContractError);
}

TEST_CASE("naive estimator equals paired sample covariance over n") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0, 10.0};
  const std::vector<double> y = {2.0, 1.0, 4.0, 3.0, 9.0};
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) cov += (x[i] - mx) * (y[i] - my);
  cov /= static_cast<double>(x.size() - 1);
  CHECK(estimate_cov_naive(x, y) ==
        doctest::Approx(cov / static_cast<double>(x.size())).epsilon(1e-12));
  CHECK_THROWS_AS(estimate_cov_naive(x, std::vector<double>{1.0}), ContractError);
}

TEST_CASE("augmented estimator reduces to the naive one without missingness") {
  // One observation per user in each period: the augmented delta-method
  // covariance of the two means collapses to the paired sample covariance
  // over n.
  SplitMix64 rng(77);
  NormalSampler normal;
  std::vector<AugmentedUser> users;
  std::vector<double> xs, ys;
  for (int u = 0; u < 400; ++u) {
    const double x = 5.0 + normal(rng);
    const double y = 3.0 + 0.5 * normal(rng);
    users.push_back({x, 1.0, y, 1.0});
    xs.push_back(x);
    ys.push_back(y);
  }
  CHECK(estimate_cov_dataaug(users) ==
        doctest::Approx(estimate_cov_naive(xs, ys)).epsilon(1e-10));
}

TEST_CASE("oracle covariance of independent metrics is near zero") {
  PopulationSpec spec;
  spec.user_count = 3000;
  spec.mean = {10.0, 10.0};
  spec.covariance.resize(2, 2);
  spec.covariance << 25.0, 0.0, 0.0, 25.0;
  spec.missingness = false;
  const auto pop = generate_population(spec, 31);
  const auto oracle = oracle_cov(pop, 0, 1, 0.5, 20000, 9);
  CHECK(oracle.reps_used == 20000);
  CHECK(oracle.discarded == 0);
  CHECK(std::fabs(oracle.value) < 4.0 * oracle.se);
}

TEST_CASE("oracle rejects configurations that discard too many repetitions") {
  PopulationSpec spec;
  spec.user_count = 100;
  spec.mean = {10.0, 10.0};
  spec.covariance.resize(2, 2);
  spec.covariance << 25.0, 15.0, 15.0, 25.0;
  const auto pop = generate_population(spec, 1);
  CHECK_THROWS_AS(oracle_cov(pop, 0, 1, 0.0005, 2000, 2), ContractError);
}

TEST_CASE("matrix estimation with one aggregate equals the scalar estimator") {
  const auto x = random_aggregate(32, 12);
  const auto est = estimate_cov_matrix(std::vector<BucketAggregate>{x}, 0.1);
  CHECK(est.raw.rows() == 1);
  CHECK(est.raw(0, 0) == estimate_cov_bucket(x, x, 0.1).value);
  CHECK(est.repaired(0, 0) >= 0.0);
}

TEST_CASE("matrix estimation is symmetric and repair yields nonnegative spectra") {
  std::vector<BucketAggregate> aggs;
  for (std::uint64_t s = 0; s < 5; ++s) aggs.push_back(random_aggregate(24, 100 + s, 4.0));
  const auto est = estimate_cov_matrix(aggs, 0.0);
  CHECK((est.raw - est.raw.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(est.repaired);
  CHECK(es.eigenvalues().minCoeff() >= 0.0);
  if (est.repair_applied) CHECK(est.min_eigenvalue_before < 0.0);
}

TEST_CASE("psd repair clips negative eigenvalues and keeps PSD inputs intact") {
  Eigen::MatrixXd pos(2, 2);
  pos << 2.0, 0.5, 0.5, 1.0;
  double min_before = 0.0;
  const Eigen::MatrixXd same = psd_repair(pos, &min_before);
  CHECK((same - pos).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(min_before > 0.0);

  Eigen::MatrixXd indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const Eigen::MatrixXd fixed = psd_repair(indef, &min_before);
  CHECK(min_before == doctest::Approx(-1.0).epsilon(1e-9));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fixed);
  CHECK(es.eigenvalues().minCoeff() >= 0.0);
}

TEST_CASE("scaled bucket covariance is unbiased for the covariance of sums") {
  PopulationSpec spec;
  spec.user_count = 500;
  spec.mean = {10.0, 10.0};
  spec.covariance.resize(2, 2);
  spec.covariance << 25.0, 15.0, 15.0, 25.0;
  spec.missingness = false;
  const auto pop = generate_population(spec, 51);
  const auto check = check_sum_cov_unbiasedness(pop, 0.2, 50, 4000, 5);
  CHECK(check.reps == 4000);
  CHECK(std::fabs(check.z) < 4.0);
}

TEST_CASE("bucket covariance expectation matches its closed form") {
  PopulationSpec spec;
  spec.user_count = 500;
  spec.mean = {10.0, 10.0};
  spec.covariance.resize(2, 2);
  spec.covariance << 25.0, 15.0, 15.0, 25.0;
  spec.missingness = false;
  const auto pop = generate_population(spec, 52);
  const auto check = check_bucket_cov_expectation(pop, 0.2, 50, 4000, 6);
  CHECK(std::fabs(check.z) < 4.0);
}

TEST_CASE("comparison harness reports consistent shapes") {
  PopulationSpec spec;
  spec.user_count = 1000;
  spec.mean = {10.0, 10.0};
  spec.covariance.resize(2, 2);
  spec.covariance << 25.0, 15.0, 15.0, 25.0;
  const auto pop = generate_population(spec, 61);
  const std::vector<int> buckets = {20, 50};
  const auto result = compare_estimators(pop, 0.2, buckets, 300, 2000, 13);
  CHECK(result.reps == 300);
  CHECK(result.ratio == 0.2);
  REQUIRE(result.bucket.size() == 2);
  CHECK(result.bucket.at(20).sd > 0.0);
  CHECK(result.bucket.at(50).sd > 0.0);
  CHECK(result.oracle.value > 0.0);
  CHECK(result.naive.mean > result.oracle.value);  // missingness inflates the naive method
}
