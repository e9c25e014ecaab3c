// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/population.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bucketcov/errors.hpp"
#include "bucketcov/hash.hpp"
#include "bucketcov/rng.hpp"

namespace bucketcov {

namespace {
// Distinct salts keep value draws and indicator draws on independent streams.
constexpr std::uint64_t kValueSalt = 0x76616c7565736565ull;
constexpr std::uint64_t kIndicatorSalt = 0x696e64696361746full;
}  // namespace

PopulationSpec PopulationSpec::defaults() {
  PopulationSpec spec;
  spec.user_count = 10000;
  spec.mean = {10.0, 10.0};
  spec.covariance.resize(2, 2);
  spec.covariance << 25.0, 15.0, 15.0, 25.0;
  spec.missingness = true;
  return spec;
}

SyntheticPopulation generate_population(const PopulationSpec& spec, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(spec.user_count);
  const auto d = static_cast<Eigen::Index>(spec.mean.size());
  if (n < 2) {
    throw ContractError("generate_population: user_count must be >= 2");
  }
  if (spec.covariance.rows() != d || spec.covariance.cols() != d) {
    throw ContractError("generate_population: covariance shape must match mean length");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(spec.covariance);
  if (llt.info() != Eigen::Success) {
    throw ContractError("generate_population: covariance must be positive definite");
  }
  const Eigen::MatrixXd L = llt.matrixL();

  SyntheticPopulation pop;
  pop.values.resize(n, d);
  pop.activeness.resize(n, d);
  pop.observed.resize(n, d);
  pop.user_ids.reserve(spec.user_count);

  Eigen::VectorXd z(d);
  for (Eigen::Index u = 0; u < n; ++u) {
    pop.user_ids.push_back("u" + std::to_string(u));
    SplitMix64 rng(derive_stream(seed ^ kValueSalt, static_cast<std::uint64_t>(u)));
    NormalSampler normal;
    for (Eigen::Index c = 0; c < d; ++c) z[c] = normal(rng);
    pop.values.row(u) = (L * z).transpose();
    for (Eigen::Index c = 0; c < d; ++c) pop.values(u, c) += spec.mean[c];
  }

  // Activeness is the value's rank within its column divided by the user
  // count; ties break on (value, user index) so the ordering is total.
  std::vector<Eigen::Index> order(spec.user_count);
  for (Eigen::Index c = 0; c < d; ++c) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double va = pop.values(a, c);
      const double vb = pop.values(b, c);
      return va < vb || (va == vb && a < b);
    });
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      pop.activeness(order[rank], c) =
          static_cast<double>(rank) / static_cast<double>(spec.user_count);
    }
  }

  for (Eigen::Index u = 0; u < n; ++u) {
    SplitMix64 rng(derive_stream(seed ^ kIndicatorSalt, static_cast<std::uint64_t>(u)));
    for (Eigen::Index c = 0; c < d; ++c) {
      const bool seen =
          !spec.missingness || rng.bernoulli(observation_probability(pop.activeness(u, c)));
      pop.observed(u, c) = seen ? 1 : 0;
    }
  }
  return pop;
}

std::vector<ObservationRecord> sample_experiment(const SyntheticPopulation& pop,
                                                 double ratio,
                                                 std::uint64_t diversion_seed) {
  std::vector<ObservationRecord> records;
  for (Eigen::Index u = 0; u < pop.users(); ++u) {
    const auto& id = pop.user_ids[static_cast<std::size_t>(u)];
    if (!assign_group(id, diversion_seed, ratio).group) continue;
    for (Eigen::Index c = 0; c < pop.columns(); ++c) {
      if (!pop.observed(u, c)) continue;
      records.push_back(
          {id, "g1", "m", "p" + std::to_string(c), pop.values(u, c)});
    }
  }
  return records;
}

Eigen::MatrixXd generate_daily_panel(std::size_t user_count, double mu,
                                     const Eigen::MatrixXd& day_cov,
                                     std::uint64_t seed) {
  const Eigen::Index d = day_cov.rows();
  if (day_cov.cols() != d || d < 1) {
    throw ContractError("generate_daily_panel: day_cov must be square and non-empty");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(day_cov);
  if (llt.info() != Eigen::Success) {
    throw ContractError("generate_daily_panel: day_cov must be positive definite");
  }
  const Eigen::MatrixXd L = llt.matrixL();

  Eigen::MatrixXd panel(static_cast<Eigen::Index>(user_count), d);
  Eigen::VectorXd z(d);
  for (Eigen::Index u = 0; u < panel.rows(); ++u) {
    SplitMix64 rng(derive_stream(seed ^ kValueSalt, static_cast<std::uint64_t>(u)));
    NormalSampler normal;
    for (Eigen::Index c = 0; c < d; ++c) z[c] = normal(rng);
    panel.row(u) = (L * z).transpose().array() + mu;
  }
  return panel;
}

}  // namespace bucketcov
