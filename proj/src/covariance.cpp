// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "bucketcov/errors.hpp"
#include "bucketcov/rng.hpp"

namespace bucketcov {
namespace {

constexpr std::uint64_t kInclusionSalt = 0x696e636c75646564ULL;
constexpr std::uint64_t kBucketSalt = 0x6275636b65747321ULL;
constexpr std::uint64_t kOracleSalt = 0x6f7261636c652121ULL;

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

MethodStats stats_of(std::span<const double> v) {
  MethodStats out;
  out.mean = mean_of(v);
  double ss = 0.0;
  for (double x : v) {
    const double d = x - out.mean;
    ss += d * d;
  }
  out.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return out;
}

// One repetition's group draw over a fixed population.
struct GroupDraw {
  std::vector<std::uint8_t> in_group;
  std::vector<std::uint32_t> members;  // row indices of included users
};

GroupDraw draw_group(const SyntheticPopulation& pop, double ratio, std::uint64_t stream) {
  GroupDraw draw;
  const auto n = static_cast<std::size_t>(pop.users());
  draw.in_group.assign(n, 0);
  draw.members.reserve(static_cast<std::size_t>(static_cast<double>(n) * ratio * 1.3) + 16);
  SplitMix64 rng(stream);
  for (std::size_t u = 0; u < n; ++u) {
    if (rng.bernoulli(ratio)) {
      draw.in_group[u] = 1;
      draw.members.push_back(static_cast<std::uint32_t>(u));
    }
  }
  return draw;
}

struct PeriodTotals {
  double sum_x = 0.0;
  double sum_y = 0.0;
  std::int64_t cnt_x = 0;
  std::int64_t cnt_y = 0;
};

PeriodTotals member_totals(const SyntheticPopulation& pop, const GroupDraw& draw,
                           Eigen::Index col_x, Eigen::Index col_y) {
  PeriodTotals t;
  for (std::uint32_t u : draw.members) {
    if (pop.observed(u, col_x)) {
      t.sum_x += pop.values(u, col_x);
      ++t.cnt_x;
    }
    if (pop.observed(u, col_y)) {
      t.sum_y += pop.values(u, col_y);
      ++t.cnt_y;
    }
  }
  return t;
}

// Bucket the group members uniformly and aggregate both periods.
void bucket_members(const SyntheticPopulation& pop, const GroupDraw& draw,
                    Eigen::Index col_x, Eigen::Index col_y, int bucket_count,
                    std::uint64_t stream, BucketAggregate* out_x, BucketAggregate* out_y) {
  out_x->bucket_count = bucket_count;
  out_y->bucket_count = bucket_count;
  out_x->sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
  out_x->counts.assign(static_cast<std::size_t>(bucket_count), 0);
  out_y->sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
  out_y->counts.assign(static_cast<std::size_t>(bucket_count), 0);
  SplitMix64 rng(stream);
  for (std::uint32_t u : draw.members) {
    const auto b = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(bucket_count)));
    if (pop.observed(u, col_x)) {
      out_x->sums[b] += pop.values(u, col_x);
      ++out_x->counts[b];
    }
    if (pop.observed(u, col_y)) {
      out_y->sums[b] += pop.values(u, col_y);
      ++out_y->counts[b];
    }
  }
}

void check_columns(const SyntheticPopulation& pop, Eigen::Index col_x, Eigen::Index col_y) {
  if (col_x < 0 || col_x >= pop.columns() || col_y < 0 || col_y >= pop.columns()) {
    throw ContractError("column index out of range for population");
  }
}

void check_ratio(double ratio) {
  if (!(ratio > 0.0) || !(ratio < 1.0)) {
    throw ContractError("group ratio must lie in (0, 1)");
  }
}

}  // namespace

double bucket_sample_cov(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("bucket series lengths differ");
  const std::size_t b = x.size();
  if (b < 2) throw ContractError("bucket sample covariance needs at least 2 buckets");
  double mx = mean_of(x);
  double my = mean_of(y);
  double acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    acc += (x[i] - mx) * (y[i] - my);
  }
  return acc / static_cast<double>(b - 1);
}

double delta_ratio_cov(double cov_ac, double cov_bd, double cov_ad, double cov_bc,
                       double a, double b, double c, double d) {
  if (b == 0.0 || d == 0.0) throw ContractError("ratio denominators must be nonzero");
  return cov_ac / (b * d) + a * c * cov_bd / (b * b * d * d) -
         c * cov_ad / (b * d * d) - a * cov_bc / (b * b * d);
}

CovEstimate estimate_cov_bucket(const BucketAggregate& x, const BucketAggregate& y,
                                double correction_ratio) {
  if (x.bucket_count != y.bucket_count) {
    throw ContractError("bucket counts differ between aggregates");
  }
  const int b = x.bucket_count;
  if (b < 2) throw ContractError("bucket estimator needs at least 2 buckets");
  if (!(correction_ratio >= 0.0) || !(correction_ratio < 1.0)) {
    throw ContractError("correction ratio must lie in [0, 1)");
  }
  const double nx = static_cast<double>(x.total_count());
  const double ny = static_cast<double>(y.total_count());
  if (nx <= 0.0 || ny <= 0.0) throw ContractError("aggregate has zero total count");
  const double sx = x.total_sum();
  const double sy = y.total_sum();

  std::vector<double> cx(x.counts.begin(), x.counts.end());
  std::vector<double> cy(y.counts.begin(), y.counts.end());
  const double k_ss = bucket_sample_cov(x.sums, y.sums);
  const double k_nn = bucket_sample_cov(cx, cy);
  const double k_sx_ny = bucket_sample_cov(x.sums, cy);
  const double k_sy_nx = bucket_sample_cov(y.sums, cx);

  const double scale = (1.0 - correction_ratio) * static_cast<double>(b);
  const double value = scale * (k_ss / (nx * ny) + sx * sy * k_nn / (nx * nx * ny * ny) -
                                sy * k_sx_ny / (nx * ny * ny) - sx * k_sy_nx / (nx * nx * ny));
  CovEstimate est;
  est.value = value;
  est.method = "bucket";
  est.bucket_count = b;
  est.correction_ratio = correction_ratio;
  return est;
}

double estimate_cov_naive(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("paired series lengths differ");
  const std::size_t n = x.size();
  if (n < 2) throw ContractError("naive estimator needs at least 2 paired users");
  const double cov = bucket_sample_cov(x, y);
  return cov / static_cast<double>(n);
}

double estimate_cov_dataaug(std::span<const AugmentedUser> users) {
  const std::size_t n = users.size();
  if (n < 2) throw ContractError("data-augmentation estimator needs at least 2 users");
  double m_sx = 0.0, m_nx = 0.0, m_sy = 0.0, m_ny = 0.0;
  for (const auto& u : users) {
    m_sx += u.sum_x;
    m_nx += u.cnt_x;
    m_sy += u.sum_y;
    m_ny += u.cnt_y;
  }
  const double total_sx = m_sx, total_nx = m_nx, total_sy = m_sy, total_ny = m_ny;
  if (total_nx == 0.0 || total_ny == 0.0) {
    throw ContractError("data-augmentation estimator saw no observations in a period");
  }
  const double dn = static_cast<double>(n);
  m_sx /= dn;
  m_nx /= dn;
  m_sy /= dn;
  m_ny /= dn;
  double c_ss = 0.0, c_nn = 0.0, c_sxny = 0.0, c_synx = 0.0;
  for (const auto& u : users) {
    const double dsx = u.sum_x - m_sx;
    const double dnx = u.cnt_x - m_nx;
    const double dsy = u.sum_y - m_sy;
    const double dny = u.cnt_y - m_ny;
    c_ss += dsx * dsy;
    c_nn += dnx * dny;
    c_sxny += dsx * dny;
    c_synx += dsy * dnx;
  }
  // User-level sample covariances scaled by n estimate covariances of the
  // four totals; the delta method then maps totals to the two averages.
  const double scale = dn / (dn - 1.0);
  return delta_ratio_cov(c_ss * scale, c_nn * scale, c_sxny * scale, c_synx * scale,
                         total_sx, total_nx, total_sy, total_ny);
}

OracleEstimate oracle_cov(const SyntheticPopulation& pop, Eigen::Index col_x,
                          Eigen::Index col_y, double ratio, int reps,
                          std::uint64_t seed) {
  check_columns(pop, col_x, col_y);
  check_ratio(ratio);
  if (reps < 100) throw ContractError("oracle needs at least 100 repetitions");
  std::vector<double> ax;
  std::vector<double> ay;
  ax.reserve(static_cast<std::size_t>(reps));
  ay.reserve(static_cast<std::size_t>(reps));
  int discarded = 0;
  const std::uint64_t base = derive_stream(seed, kOracleSalt);
  for (int r = 0; r < reps; ++r) {
    const GroupDraw draw =
        draw_group(pop, ratio, derive_stream(base, static_cast<std::uint64_t>(r)));
    const PeriodTotals t = member_totals(pop, draw, col_x, col_y);
    if (t.cnt_x == 0 || t.cnt_y == 0) {
      ++discarded;
      continue;
    }
    ax.push_back(t.sum_x / static_cast<double>(t.cnt_x));
    ay.push_back(t.sum_y / static_cast<double>(t.cnt_y));
  }
  if (discarded * 100 > reps) {
    throw ContractError("oracle discarded more than 1% of repetitions");
  }
  const auto used = static_cast<int>(ax.size());
  if (used < 2) throw ContractError("oracle retained fewer than 2 repetitions");
  const double mx = mean_of(ax);
  const double my = mean_of(ay);
  double c1 = 0.0;
  double c2 = 0.0;
  for (int i = 0; i < used; ++i) {
    const double p = (ax[static_cast<std::size_t>(i)] - mx) * (ay[static_cast<std::size_t>(i)] - my);
    c1 += p;
    c2 += p * p;
  }
  const double dn = static_cast<double>(used);
  const double cov = c1 / (dn - 1.0);
  const double m22 = c2 / dn;
  OracleEstimate out;
  out.value = cov;
  out.se = std::sqrt(std::max(0.0, m22 - cov * cov) / dn);
  out.reps_used = used;
  out.discarded = discarded;
  return out;
}

Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& m, double* min_eigenvalue_before) {
  if (m.rows() != m.cols() || m.rows() < 1) throw ContractError("matrix must be square");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw ContractError("eigendecomposition failed");
  Eigen::VectorXd evals = es.eigenvalues();
  if (min_eigenvalue_before != nullptr) *min_eigenvalue_before = evals.minCoeff();
  const double eps =
      1e-10 * std::max(sym.trace(), 0.0) / static_cast<double>(sym.rows());
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    evals[i] = std::max(evals[i], eps);
  }
  return es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose();
}

MatrixEstimate estimate_cov_matrix(std::span<const BucketAggregate> aggregates,
                                   double correction_ratio) {
  const auto d = static_cast<Eigen::Index>(aggregates.size());
  if (d < 1) throw ContractError("matrix estimate needs at least 1 aggregate");
  MatrixEstimate out;
  out.raw.setZero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      const double v = estimate_cov_bucket(aggregates[static_cast<std::size_t>(i)],
                                           aggregates[static_cast<std::size_t>(j)],
                                           correction_ratio)
                           .value;
      out.raw(i, j) = v;
      out.raw(j, i) = v;
    }
  }
  out.repaired = psd_repair(out.raw, &out.min_eigenvalue_before);
  const double eps =
      1e-10 * std::max(out.raw.trace(), 0.0) / static_cast<double>(d);
  out.repair_applied = out.min_eigenvalue_before < eps;
  return out;
}

ComparisonResult compare_estimators(const SyntheticPopulation& pop, double ratio,
                                    std::span<const int> bucket_counts,
                                    int estimator_reps, int oracle_reps,
                                    std::uint64_t seed) {
  check_ratio(ratio);
  if (pop.columns() < 2) throw ContractError("population needs two metric columns");
  if (estimator_reps < 2) throw ContractError("need at least 2 estimator repetitions");
  for (int b : bucket_counts) {
    if (b < 2) throw ContractError("bucket counts must be at least 2");
  }
  const Eigen::Index col_x = 0;
  const Eigen::Index col_y = 1;

  ComparisonResult result;
  result.ratio = ratio;
  result.oracle = oracle_cov(pop, col_x, col_y, ratio, oracle_reps, seed);

  std::vector<double> naive_vals;
  std::vector<double> dataaug_vals;
  std::map<int, std::vector<double>> bucket_vals;
  for (int b : bucket_counts) bucket_vals[b] = {};

  std::vector<double> paired_x;
  std::vector<double> paired_y;
  std::vector<AugmentedUser> aug;
  const std::uint64_t incl_base = derive_stream(seed, kInclusionSalt);
  const std::uint64_t bucket_base = derive_stream(seed, kBucketSalt);
  int discarded = 0;
  for (int r = 0; r < estimator_reps; ++r) {
    const GroupDraw draw =
        draw_group(pop, ratio, derive_stream(incl_base, static_cast<std::uint64_t>(r)));
    paired_x.clear();
    paired_y.clear();
    aug.clear();
    for (std::uint32_t u : draw.members) {
      const bool ox = pop.observed(u, col_x) != 0;
      const bool oy = pop.observed(u, col_y) != 0;
      AugmentedUser a;
      if (ox) {
        a.sum_x = pop.values(u, col_x);
        a.cnt_x = 1.0;
      }
      if (oy) {
        a.sum_y = pop.values(u, col_y);
        a.cnt_y = 1.0;
      }
      aug.push_back(a);
      if (ox && oy) {
        paired_x.push_back(pop.values(u, col_x));
        paired_y.push_back(pop.values(u, col_y));
      }
    }
    if (paired_x.size() < 2 || aug.size() < 2) {
      ++discarded;
      continue;
    }

    naive_vals.push_back(estimate_cov_naive(paired_x, paired_y));
    dataaug_vals.push_back(estimate_cov_dataaug(aug));
    const std::uint64_t rep_bucket_base =
        derive_stream(bucket_base, static_cast<std::uint64_t>(r));
    BucketAggregate agg_x;
    BucketAggregate agg_y;
    for (int b : bucket_counts) {
      bucket_members(pop, draw, col_x, col_y, b,
                     derive_stream(rep_bucket_base, static_cast<std::uint64_t>(b)), &agg_x,
                     &agg_y);
      bucket_vals[b].push_back(estimate_cov_bucket(agg_x, agg_y, ratio).value);
    }
  }
  if (discarded * 100 > estimator_reps) {
    throw ContractError("estimator comparison discarded more than 1% of repetitions");
  }
  result.reps = static_cast<int>(naive_vals.size());
  result.naive = stats_of(naive_vals);
  result.dataaug = stats_of(dataaug_vals);
  for (auto& [b, vals] : bucket_vals) {
    result.bucket[b] = stats_of(vals);
  }
  return result;
}

std::vector<BiasFactorRow> dataaug_bias_experiment(const SyntheticPopulation& pop,
                                                   std::span<const double> ratios,
                                                   int estimator_reps, int oracle_reps,
                                                   std::uint64_t seed) {
  std::vector<BiasFactorRow> rows;
  rows.reserve(ratios.size());
  std::uint64_t salt = 1;
  for (double ratio : ratios) {
    check_ratio(ratio);
    const std::uint64_t sub = derive_stream(seed, salt++);
    BiasFactorRow row;
    row.ratio = ratio;
    const OracleEstimate oracle = oracle_cov(pop, 0, 1, ratio, oracle_reps, sub);
    row.truth = oracle.value;
    row.truth_se = oracle.se;

    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(estimator_reps));
    std::vector<AugmentedUser> aug;
    const std::uint64_t incl_base = derive_stream(sub, kInclusionSalt);
    int discarded = 0;
    for (int r = 0; r < estimator_reps; ++r) {
      const GroupDraw draw =
          draw_group(pop, ratio, derive_stream(incl_base, static_cast<std::uint64_t>(r)));
      aug.clear();
      for (std::uint32_t u : draw.members) {
        AugmentedUser a;
        if (pop.observed(u, 0)) {
          a.sum_x = pop.values(u, 0);
          a.cnt_x = 1.0;
        }
        if (pop.observed(u, 1)) {
          a.sum_y = pop.values(u, 1);
          a.cnt_y = 1.0;
        }
        aug.push_back(a);
      }
      if (aug.size() < 2) {
        ++discarded;
        continue;
      }
      bool has_x = false;
      bool has_y = false;
      for (const auto& a : aug) {
        has_x = has_x || a.cnt_x > 0.0;
        has_y = has_y || a.cnt_y > 0.0;
      }
      if (!has_x || !has_y) {
        ++discarded;
        continue;
      }
      vals.push_back(estimate_cov_dataaug(aug));
    }
    if (discarded * 100 > estimator_reps) {
      throw ContractError("bias experiment discarded more than 1% of repetitions");
    }
    const MethodStats stats = stats_of(vals);
    row.dataaug_mean = stats.mean;
    row.dataaug_sd = stats.sd;
    row.bias_factor = stats.mean * (1.0 - ratio) / row.truth;
    rows.push_back(row);
  }
  return rows;
}

IdentityCheck check_sum_cov_unbiasedness(const SyntheticPopulation& pop, double ratio,
                                         int bucket_count, int reps, std::uint64_t seed) {
  check_ratio(ratio);
  if (bucket_count < 2) throw ContractError("bucket count must be at least 2");
  if (reps < 100) throw ContractError("identity check needs at least 100 repetitions");
  std::vector<double> d_vals;
  std::vector<double> sum_x;
  std::vector<double> sum_y;
  d_vals.reserve(static_cast<std::size_t>(reps));
  sum_x.reserve(static_cast<std::size_t>(reps));
  sum_y.reserve(static_cast<std::size_t>(reps));
  const std::uint64_t incl_base = derive_stream(seed, kInclusionSalt);
  const std::uint64_t bucket_base = derive_stream(seed, kBucketSalt);
  BucketAggregate agg_x;
  BucketAggregate agg_y;
  for (int r = 0; r < reps; ++r) {
    const GroupDraw draw =
        draw_group(pop, ratio, derive_stream(incl_base, static_cast<std::uint64_t>(r)));
    bucket_members(pop, draw, 0, 1, bucket_count,
                   derive_stream(bucket_base, static_cast<std::uint64_t>(r)), &agg_x, &agg_y);
    const double k = bucket_sample_cov(agg_x.sums, agg_y.sums);
    d_vals.push_back((1.0 - ratio) * static_cast<double>(bucket_count) * k);
    sum_x.push_back(agg_x.total_sum());
    sum_y.push_back(agg_y.total_sum());
  }
  const double dn = static_cast<double>(reps);
  const double mx = mean_of(sum_x);
  const double my = mean_of(sum_y);
  // W_r pits each repetition's statistic against its centered cross product;
  // E[W] = 0 under the identity, and sd(W) prices the correlation between the
  // two sides.
  std::vector<double> w(d_vals.size());
  const double adj = dn / (dn - 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = d_vals[i] - adj * (sum_x[i] - mx) * (sum_y[i] - my);
  }
  const MethodStats ws = stats_of(w);
  IdentityCheck out;
  out.lhs = mean_of(d_vals);
  out.rhs = out.lhs - ws.mean;  // empirical covariance of the period totals
  out.se = ws.sd / std::sqrt(dn);
  out.z = out.se > 0.0 ? ws.mean / out.se : 0.0;
  out.reps = reps;
  return out;
}

IdentityCheck check_bucket_cov_expectation(const SyntheticPopulation& pop, double ratio,
                                           int bucket_count, int reps, std::uint64_t seed) {
  check_ratio(ratio);
  if (bucket_count < 2) throw ContractError("bucket count must be at least 2");
  if (reps < 100) throw ContractError("identity check needs at least 100 repetitions");
  double rhs_sum = 0.0;
  for (Eigen::Index u = 0; u < pop.users(); ++u) {
    const double ox = pop.observed(u, 0) ? pop.values(u, 0) : 0.0;
    const double oy = pop.observed(u, 1) ? pop.values(u, 1) : 0.0;
    rhs_sum += ox * oy;
  }
  const double rhs = ratio / static_cast<double>(bucket_count) * rhs_sum;

  std::vector<double> k_vals;
  k_vals.reserve(static_cast<std::size_t>(reps));
  const std::uint64_t incl_base = derive_stream(seed, kInclusionSalt);
  const std::uint64_t bucket_base = derive_stream(seed, kBucketSalt);
  BucketAggregate agg_x;
  BucketAggregate agg_y;
  for (int r = 0; r < reps; ++r) {
    const GroupDraw draw =
        draw_group(pop, ratio, derive_stream(incl_base, static_cast<std::uint64_t>(r)));
    bucket_members(pop, draw, 0, 1, bucket_count,
                   derive_stream(bucket_base, static_cast<std::uint64_t>(r)), &agg_x, &agg_y);
    k_vals.push_back(bucket_sample_cov(agg_x.sums, agg_y.sums));
  }
  const MethodStats ks = stats_of(k_vals);
  IdentityCheck out;
  out.lhs = ks.mean;
  out.rhs = rhs;
  out.se = ks.sd / std::sqrt(static_cast<double>(reps));
  out.z = out.se > 0.0 ? (out.lhs - out.rhs) / out.se : 0.0;
  out.reps = reps;
  return out;
}

}  // namespace bucketcov
