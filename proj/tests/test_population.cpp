// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/population.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "bucketcov/errors.hpp"
#include "bucketcov/hash.hpp"

using namespace bucketcov;

namespace {

PopulationSpec small_spec(std::size_t users, bool missingness) {
  PopulationSpec spec = PopulationSpec::defaults();
  spec.user_count = users;
  spec.missingness = missingness;
  return spec;
}

}  // namespace

TEST_CASE("population generation is bitwise reproducible") {
  const auto spec = small_spec(500, true);
  const auto a = generate_population(spec, 9);
  const auto b = generate_population(spec, 9);
  CHECK(a.user_ids == b.user_ids);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.activeness - b.activeness).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.observed.cast<int>() - b.observed.cast<int>()).cwiseAbs().maxCoeff() == 0);
  const auto c = generate_population(spec, 10);
  CHECK((a.values - c.values).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("activeness ranks each column as a permutation of k over n") {
  const std::size_t n = 400;
  const auto pop = generate_population(small_spec(n, true), 3);
  for (Eigen::Index col = 0; col < pop.columns(); ++col) {
    std::vector<double> e(n);
    for (std::size_t u = 0; u < n; ++u) e[u] = pop.activeness(static_cast<Eigen::Index>(u), col);
    std::sort(e.begin(), e.end());
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(e[k] == doctest::Approx(static_cast<double>(k) / static_cast<double>(n)).epsilon(1e-12));
    }
  }
}

TEST_CASE("observation probability follows the activeness floor") {
  CHECK(observation_probability(0.0) == 0.5);
  CHECK(observation_probability(0.5) == 0.5);
  CHECK(observation_probability(0.8) == 0.8);
}

TEST_CASE("observed fraction matches the expected rate") {
  // With activeness uniform on [0,1) and success max(0.5, e), the expected
  // observation rate integrates to 0.625.
  const std::size_t n = 20000;
  const auto pop = generate_population(small_spec(n, true), 17);
  const double total = static_cast<double>(n) * static_cast<double>(pop.columns());
  double observed = 0.0;
  for (Eigen::Index u = 0; u < pop.users(); ++u) {
    for (Eigen::Index c = 0; c < pop.columns(); ++c) {
      observed += pop.observed(u, c);
    }
  }
  const double rate = observed / total;
  const double se = std::sqrt(0.625 * 0.375 / total);
  CHECK(std::fabs(rate - 0.625) < 5.0 * se);
}

TEST_CASE("disabling missingness observes every value") {
  const auto pop = generate_population(small_spec(300, false), 4);
  CHECK(pop.observed.cast<int>().minCoeff() == 1);
}

TEST_CASE("value columns have the configured covariance") {
  PopulationSpec spec = small_spec(40000, false);
  const auto pop = generate_population(spec, 21);
  const Eigen::Index n = pop.users();
  const Eigen::VectorXd mean = pop.values.colwise().mean();
  Eigen::MatrixXd centered = pop.values.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  for (Eigen::Index i = 0; i < 2; ++i) {
    CHECK(std::fabs(mean[i] - spec.mean[static_cast<std::size_t>(i)]) <
          5.0 * std::sqrt(spec.covariance(i, i) / static_cast<double>(n)));
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(cov(i, j) == doctest::Approx(spec.covariance(i, j)).epsilon(0.05));
    }
  }
}

TEST_CASE("experiment sampling emits one record per observed group member cell") {
  const auto pop = generate_population(small_spec(2000, true), 6);
  const double ratio = 0.3;
  const std::uint64_t seed = 11;
  const auto records = sample_experiment(pop, ratio, seed);

  std::size_t expected = 0;
  for (Eigen::Index u = 0; u < pop.users(); ++u) {
    if (!assign_group(pop.user_ids[static_cast<std::size_t>(u)], seed, ratio).group) continue;
    for (Eigen::Index c = 0; c < pop.columns(); ++c) {
      expected += pop.observed(u, c);
    }
  }
  CHECK(records.size() == expected);
  for (const auto& r : records) {
    CHECK(r.group == "g1");
    CHECK(r.metric == "m");
    CHECK((r.period == "p0" || r.period == "p1"));
  }
  const auto again = sample_experiment(pop, ratio, seed);
  CHECK(again.size() == records.size());
  bool same = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    same = same && records[i].user == again[i].user && records[i].value == again[i].value &&
           records[i].period == again[i].period;
  }
  CHECK(same);
}

TEST_CASE("daily panel matches its mean and covariance") {
  const int days = 3;
  Eigen::MatrixXd day_cov = Eigen::MatrixXd::Constant(days, days, 2.0);
  day_cov.diagonal().setConstant(4.0);
  const std::size_t n = 30000;
  const auto panel = generate_daily_panel(n, 1.5, day_cov, 8);
  REQUIRE(panel.rows() == static_cast<Eigen::Index>(n));
  REQUIRE(panel.cols() == days);
  const Eigen::VectorXd mean = panel.colwise().mean();
  Eigen::MatrixXd centered = panel.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(n - 1);
  for (int d = 0; d < days; ++d) {
    CHECK(std::fabs(mean[d] - 1.5) < 5.0 * std::sqrt(4.0 / static_cast<double>(n)));
    for (int e = 0; e < days; ++e) {
      CHECK(cov(d, e) == doctest::Approx(day_cov(d, e)).epsilon(0.08));
    }
  }
  const auto panel2 = generate_daily_panel(n, 1.5, day_cov, 8);
  CHECK((panel - panel2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("population spec validation rejects bad shapes") {
  PopulationSpec spec = PopulationSpec::defaults();
  spec.user_count = 0;
  CHECK_THROWS_AS(generate_population(spec, 1), ContractError);
}
