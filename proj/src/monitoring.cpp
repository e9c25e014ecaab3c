// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/monitoring.hpp"

#include <cmath>
#include <cstddef>

#include "bucketcov/aggregate.hpp"
#include "bucketcov/covariance.hpp"
#include "bucketcov/errors.hpp"
#include "bucketcov/population.hpp"
#include "bucketcov/rng.hpp"

namespace bucketcov {
namespace {

constexpr std::uint64_t kPanelSalt = 0x70616e656c646179ULL;
constexpr std::uint64_t kBucketSalt = 0x6d6f6e6275636b65ULL;

void validate(const MonitorConfig& cfg) {
  if (cfg.days < 1) throw ContractError("monitor needs at least 1 day");
  if (cfg.users < 2) throw ContractError("monitor needs at least 2 users");
  if (cfg.bucket_count < 2) throw ContractError("bucket count must be at least 2");
  if (!(cfg.day_var > 0.0)) throw ContractError("day variance must be positive");
  if (!(cfg.day_corr >= 0.0) || !(cfg.day_corr < 1.0)) {
    throw ContractError("day correlation must lie in [0, 1)");
  }
  if (!(cfg.threshold > 0.0)) throw ContractError("threshold must be positive");
  if (!(cfg.prior_odds > 0.0)) throw ContractError("prior odds must be positive");
  if (cfg.mu1 == cfg.mu0) throw ContractError("alternative mean must differ from null mean");
}

// Bucket-estimate the day covariance of the averages from one run's panel.
Eigen::MatrixXd estimate_panel_cov(const Eigen::MatrixXd& panel, int bucket_count,
                                   std::uint64_t stream) {
  const Eigen::Index users = panel.rows();
  const Eigen::Index days = panel.cols();
  std::vector<std::uint32_t> bucket_of(static_cast<std::size_t>(users));
  SplitMix64 rng(stream);
  for (Eigen::Index u = 0; u < users; ++u) {
    bucket_of[static_cast<std::size_t>(u)] =
        static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(bucket_count)));
  }
  std::vector<BucketAggregate> per_day(static_cast<std::size_t>(days));
  for (Eigen::Index d = 0; d < days; ++d) {
    auto& agg = per_day[static_cast<std::size_t>(d)];
    agg.bucket_count = bucket_count;
    agg.sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
    agg.counts.assign(static_cast<std::size_t>(bucket_count), 0);
    for (Eigen::Index u = 0; u < users; ++u) {
      const auto b = bucket_of[static_cast<std::size_t>(u)];
      agg.sums[b] += panel(u, d);
      ++agg.counts[b];
    }
  }
  Eigen::MatrixXd raw(days, days);
  for (Eigen::Index i = 0; i < days; ++i) {
    for (Eigen::Index j = i; j < days; ++j) {
      const double v = estimate_cov_bucket(per_day[static_cast<std::size_t>(i)],
                                           per_day[static_cast<std::size_t>(j)], 0.0)
                           .value;
      raw(i, j) = v;
      raw(j, i) = v;
    }
  }
  return raw;
}

}  // namespace

Eigen::MatrixXd compound_symmetric(int dim, double var, double corr) {
  if (dim < 1) throw ContractError("dimension must be at least 1");
  if (!(var > 0.0)) throw ContractError("variance must be positive");
  if (!(corr >= 0.0) || !(corr < 1.0)) throw ContractError("correlation must lie in [0, 1)");
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(dim, dim, var * corr);
  m.diagonal().setConstant(var);
  return m;
}

double path_log_likelihood_ratio(const Eigen::VectorXd& x, const Eigen::MatrixXd& sigma,
                                 double mu0, double mu1) {
  const Eigen::Index d = x.size();
  if (d < 1) throw ContractError("path must be nonempty");
  if (sigma.rows() != d || sigma.cols() != d) {
    throw ContractError("covariance shape does not match path length");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma + sigma.transpose()));
  if (es.info() != Eigen::Success) throw ContractError("eigendecomposition failed");
  Eigen::VectorXd evals = es.eigenvalues();
  const double eps =
      1e-10 * std::max(evals.sum(), 0.0) / static_cast<double>(d);
  if (!(evals.maxCoeff() > 0.0)) throw ContractError("covariance has no positive eigenvalue");
  for (Eigen::Index i = 0; i < d; ++i) {
    evals[i] = std::max(evals[i], eps > 0.0 ? eps : 1e-300);
  }
  const Eigen::VectorXd mid = x.array() - 0.5 * (mu0 + mu1);
  const Eigen::VectorXd z =
      es.eigenvectors() * (es.eigenvectors().transpose() * mid).cwiseQuotient(evals);
  return (mu1 - mu0) * z.sum();
}

MonitorOutcome run_monitor(const Eigen::VectorXd& day_averages,
                           const Eigen::MatrixXd& sigma_avg, const MonitorConfig& cfg) {
  validate(cfg);
  if (day_averages.size() != cfg.days) {
    throw ContractError("path length does not match configured days");
  }
  if (sigma_avg.rows() != cfg.days || sigma_avg.cols() != cfg.days) {
    throw ContractError("covariance shape does not match configured days");
  }
  const double log_threshold = std::log(cfg.threshold) - std::log(cfg.prior_odds);
  MonitorOutcome out;
  out.log_bf.reserve(static_cast<std::size_t>(cfg.days));
  for (int day = 1; day <= cfg.days; ++day) {
    const double log_bf = path_log_likelihood_ratio(
        day_averages.head(day), sigma_avg.topLeftCorner(day, day), cfg.mu0, cfg.mu1);
    out.log_bf.push_back(log_bf);
    if (log_bf > log_threshold) {
      out.stopped_day = day;
      out.rejected = true;
      break;
    }
  }
  return out;
}

FdrResult fdr_experiment(const MonitorConfig& cfg, int runs_per_hypothesis,
                         std::uint64_t seed) {
  validate(cfg);
  if (runs_per_hypothesis < 100) throw ContractError("need at least 100 runs per hypothesis");

  const Eigen::MatrixXd user_cov = compound_symmetric(cfg.days, cfg.day_var, cfg.day_corr);
  const Eigen::MatrixXd avg_cov = user_cov / static_cast<double>(cfg.users);
  Eigen::MatrixXd fixed_sigma;
  if (cfg.mode == CovarianceMode::kIndependent) {
    fixed_sigma = avg_cov.diagonal().asDiagonal();
  } else if (cfg.mode == CovarianceMode::kTrueCov) {
    fixed_sigma = avg_cov;
  }

  FdrResult result;
  result.runs_per_hypothesis = runs_per_hypothesis;
  long stop_day_total = 0;
  int valid_h1 = 0;
  for (int hyp = 0; hyp < 2; ++hyp) {
    const double mu = hyp == 0 ? cfg.mu0 : cfg.mu1;
    const std::uint64_t hyp_seed = derive_stream(seed, static_cast<std::uint64_t>(hyp));
    for (int r = 0; r < runs_per_hypothesis; ++r) {
      const std::uint64_t run_seed = derive_stream(hyp_seed, static_cast<std::uint64_t>(r));
      const Eigen::MatrixXd panel = generate_daily_panel(
          cfg.users, mu, user_cov, derive_stream(run_seed, kPanelSalt));
      const Eigen::VectorXd averages = panel.colwise().mean();
      MonitorOutcome outcome;
      if (cfg.mode == CovarianceMode::kEstimatedCov) {
        Eigen::MatrixXd est;
        try {
          est = estimate_panel_cov(panel, cfg.bucket_count,
                                   derive_stream(run_seed, kBucketSalt));
          outcome = run_monitor(averages, est, cfg);
        } catch (const ContractError&) {
          ++result.invalid_runs;  // estimation failed; drop the run but keep score
          continue;
        }
      } else {
        outcome = run_monitor(averages, fixed_sigma, cfg);
      }
      if (hyp == 1) ++valid_h1;
      if (outcome.rejected) {
        if (hyp == 0) {
          ++result.rejections_h0;
        } else {
          ++result.rejections_h1;
          stop_day_total += outcome.stopped_day;
        }
      }
    }
  }
  const int total = result.rejections_h0 + result.rejections_h1;
  result.zero_rejections = total == 0;
  result.fdr = total > 0 ? static_cast<double>(result.rejections_h0) / total : 0.0;
  result.power = valid_h1 > 0 ? static_cast<double>(result.rejections_h1) /
                                    static_cast<double>(valid_h1)
                              : 0.0;
  result.mean_stop_day = result.rejections_h1 > 0
                             ? static_cast<double>(stop_day_total) /
                                   static_cast<double>(result.rejections_h1)
                             : 0.0;
  return result;
}

}  // namespace bucketcov
