// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <numeric>
#include <utility>

#include "bucketcov/aggregate.hpp"
#include "bucketcov/covariance.hpp"
#include "bucketcov/errors.hpp"
#include "bucketcov/rng.hpp"

namespace bucketcov {
namespace {

constexpr std::uint64_t kEvalSalt = 0x6576616c73616c74ULL;
constexpr std::uint64_t kAcqSalt = 0x6163717569726521ULL;

constexpr double kHartA[4][6] = {
    {10.0, 3.0, 17.0, 3.5, 1.7, 8.0},
    {0.05, 10.0, 17.0, 0.1, 8.0, 14.0},
    {3.0, 3.5, 1.7, 10.0, 17.0, 8.0},
    {17.0, 8.0, 0.05, 10.0, 0.1, 14.0},
};
constexpr double kHartP[4][6] = {
    {0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886},
    {0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991},
    {0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650},
    {0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381},
};
constexpr double kHartAlpha[4] = {1.0, 1.2, 3.0, 3.2};
constexpr int kHaltonBases[kBoDims] = {2, 3, 5, 7, 11, 13};

constexpr double kMinNoiseVar = 1e-8;

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double norm_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Expected improvement over the incumbent, optionally damped by the fraction
// of posterior uncertainty that another noisy look would actually resolve
// (augmented EI). Without damping the search can re-measure near-duplicate
// points long after their posterior is dominated by observation noise.
double expected_improvement(const GaussianProcess& gp, const Point& x, double incumbent,
                            double eval_noise_var) {
  const auto p = gp.posterior(x);
  const double damp = 1.0 - std::sqrt(eval_noise_var / (p.var + eval_noise_var));
  const double s = std::sqrt(p.var);
  if (s < 1e-12) return std::max(incumbent - p.mean, 0.0) * damp;
  const double z = (incumbent - p.mean) / s;
  return ((incumbent - p.mean) * norm_cdf(z) + s * norm_pdf(z)) * damp;
}

double l1_distance(const Point& a, const Point& b) {
  double d = 0.0;
  for (int k = 0; k < kBoDims; ++k) d += std::abs(a[k] - b[k]);
  return d;
}

Point clip_unit(Point x) {
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
  return x;
}

// Fold a point back into the unit box by reflecting at the walls. Unlike
// clamping this does not pile perturbation mass onto the box faces.
Point reflect_unit(Point x) {
  for (double& v : x) {
    v = std::fabs(std::fmod(v, 2.0));
    if (v > 1.0) v = 2.0 - v;
  }
  return x;
}

void validate_config(const BoConfig& cfg) {
  if (cfg.init_points < 2) throw ContractError("need at least 2 initial points");
  if (cfg.iterations <= cfg.init_points) {
    throw ContractError("iterations must exceed the initial design size");
  }
  if (cfg.samples_per_eval < 4) throw ContractError("need at least 4 samples per evaluation");
  if (cfg.bucket_count < 2 || cfg.bucket_count > cfg.samples_per_eval) {
    throw ContractError("bucket count must lie in [2, samples_per_eval]");
  }
  if (cfg.pool_size < 64) throw ContractError("candidate pool too small");
  if (cfg.refine_count < 1) throw ContractError("need at least 1 refinement candidate");
}

}  // namespace

double hartmann6(const Point& x) {
  for (const double v : x) {
    if (!(v >= 0.0) || !(v <= 1.0)) {
      throw ContractError("hartmann6 input must lie in the unit hypercube");
    }
  }
  double outer = 0.0;
  for (int i = 0; i < 4; ++i) {
    double inner = 0.0;
    for (int j = 0; j < kBoDims; ++j) {
      const double d = x[static_cast<std::size_t>(j)] - kHartP[i][j];
      inner += kHartA[i][j] * d * d;
    }
    outer += kHartAlpha[i] * std::exp(-inner);
  }
  return -outer;
}

double composite_objective(const Point& x) { return 3.0 * hartmann6(x); }

Point halton_point(std::uint64_t index) {
  Point out{};
  for (int k = 0; k < kBoDims; ++k) {
    const auto base = static_cast<std::uint64_t>(kHaltonBases[k]);
    std::uint64_t i = index + 1;
    double f = 1.0;
    double r = 0.0;
    while (i > 0) {
      f /= static_cast<double>(base);
      r += f * static_cast<double>(i % base);
      i /= base;
    }
    out[static_cast<std::size_t>(k)] = r;
  }
  return out;
}

Eigen::Matrix2d positive_noise_cov() {
  Eigen::Matrix2d m;
  m << 0.1375, 0.10825318, 0.10825318, 0.1125;
  return m;
}

Eigen::Matrix2d negative_noise_cov() {
  Eigen::Matrix2d m;
  m << 0.084375, -0.11095398, -0.11095398, 0.1700625;
  return m;
}

Evaluation noisy_evaluate(const Point& x, const Eigen::Matrix2d& noise_cov, int samples,
                          int bucket_count, bool use_cov_term, std::uint64_t stream) {
  if (samples < 4) throw ContractError("need at least 4 samples per evaluation");
  if (bucket_count < 2 || bucket_count > samples) {
    throw ContractError("bucket count must lie in [2, samples]");
  }
  const double n = static_cast<double>(samples);
  // Cholesky of the per-sample covariance n * noise_cov.
  const double a = n * noise_cov(0, 0);
  const double b = n * noise_cov(0, 1);
  const double c = n * noise_cov(1, 1);
  if (!(a > 0.0) || !(c > 0.0)) throw ContractError("noise covariance must be positive definite");
  const double l11 = std::sqrt(a);
  const double l21 = b / l11;
  const double rem = c - l21 * l21;
  if (!(rem > 0.0)) throw ContractError("noise covariance must be positive definite");
  const double l22 = std::sqrt(rem);

  const double f = hartmann6(x);
  const double mu1 = 2.0 * f;
  const double mu2 = f;

  SplitMix64 normal_rng(derive_stream(stream, 1));
  NormalSampler normal;
  SplitMix64 assign(derive_stream(stream, 2));
  BucketAggregate agg1;
  BucketAggregate agg2;
  agg1.bucket_count = bucket_count;
  agg2.bucket_count = bucket_count;
  agg1.sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
  agg1.counts.assign(static_cast<std::size_t>(bucket_count), 0);
  agg2.sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
  agg2.counts.assign(static_cast<std::size_t>(bucket_count), 0);
  double sum1 = 0.0, sum2 = 0.0, sq1 = 0.0, sq2 = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double z1 = normal(normal_rng);
    const double z2 = normal(normal_rng);
    const double s1 = mu1 + l11 * z1;
    const double s2 = mu2 + l21 * z1 + l22 * z2;
    sum1 += s1;
    sum2 += s2;
    sq1 += s1 * s1;
    sq2 += s2 * s2;
    const auto bkt =
        static_cast<std::size_t>(assign.below(static_cast<std::uint64_t>(bucket_count)));
    agg1.sums[bkt] += s1;
    ++agg1.counts[bkt];
    agg2.sums[bkt] += s2;
    ++agg2.counts[bkt];
  }
  const double m1 = sum1 / n;
  const double m2 = sum2 / n;
  const double v1 = (sq1 - n * m1 * m1) / (n - 1.0);  // per-sample variances
  const double v2 = (sq2 - n * m2 * m2) / (n - 1.0);

  Evaluation out;
  // The bucket estimator returns the covariance of the two means; scale by n
  // to report the per-sample covariance alongside the per-sample variances.
  out.metric_cov = estimate_cov_bucket(agg1, agg2, 0.0).value * n;
  out.value = m1 + m2;
  double var = (v1 + v2) / n;
  if (use_cov_term) var += 2.0 * out.metric_cov / n;
  out.noise_var = std::max(var, kMinNoiseVar);
  return out;
}

GaussianProcess::GaussianProcess(std::vector<Point> x, std::vector<double> y,
                                 std::vector<double> noise_var)
    : x_(std::move(x)) {
  const auto m = static_cast<Eigen::Index>(x_.size());
  if (m < 2) throw ContractError("gaussian process needs at least 2 observations");
  if (y.size() != x_.size() || noise_var.size() != x_.size()) {
    throw ContractError("observation arrays must have matching lengths");
  }
  y_ = Eigen::Map<const Eigen::VectorXd>(y.data(), m);
  noise_var_ = Eigen::Map<const Eigen::VectorXd>(noise_var.data(), m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(noise_var_[i] >= 0.0)) throw ContractError("noise variances must be nonnegative");
  }
  mean_ = y_.mean();
  const double var = (y_.array() - mean_).square().sum() / static_cast<double>(m - 1);
  sd0_ = std::max(std::sqrt(var), 1e-3);
  // Signal amplitude is not identifiable below the observation-noise scale,
  // and underestimating it flattens the posterior into a useless surrogate.
  // Keep the fit at least at that scale.
  const double sf_lo =
      std::max(0.5 * sd0_, 0.8 * std::sqrt(noise_var_.mean()));
  const double sf_hi = std::max(8.0 * sd0_, 2.0 * sf_lo);

  // Coordinate ascent on marginal likelihood plus lognormal hyperpriors,
  // restarted from three lengthscale guesses.
  double best_obj = -std::numeric_limits<double>::infinity();
  double best_sf = std::clamp(sd0_, sf_lo, sf_hi);
  std::array<double, kBoDims> best_ls{};
  best_ls.fill(0.4);
  for (const double ls0 : {0.25, 0.6, 1.0}) {
    double sf = std::clamp(sd0_, sf_lo, sf_hi);
    std::array<double, kBoDims> ls{};
    ls.fill(ls0);
    double cur = fit_objective(sf, ls, nullptr);
    double step = 0.7;
    for (int sweep = 0; sweep < 7; ++sweep) {
      for (int p = 0; p <= kBoDims; ++p) {
        for (const double sgn : {1.0, -1.0}) {
          double cand_sf = sf;
          std::array<double, kBoDims> cand_ls = ls;
          if (p == 0) {
            cand_sf = std::clamp(sf * std::exp(sgn * step), sf_lo, sf_hi);
          } else {
            cand_ls[static_cast<std::size_t>(p - 1)] = std::clamp(
                cand_ls[static_cast<std::size_t>(p - 1)] * std::exp(sgn * step), 0.12, 1.5);
          }
          const double val = fit_objective(cand_sf, cand_ls, nullptr);
          if (val > cur) {
            sf = cand_sf;
            ls = cand_ls;
            cur = val;
          }
        }
      }
      step *= 0.6;
    }
    if (cur > best_obj) {
      best_obj = cur;
      best_sf = sf;
      best_ls = ls;
    }
  }
  sf_ = best_sf;
  ls_ = best_ls;
  finalize();
}

double GaussianProcess::fit_objective(double sf, const std::array<double, kBoDims>& ls,
                                      Eigen::LLT<Eigen::MatrixXd>* llt) const {
  const auto m = static_cast<Eigen::Index>(x_.size());
  Eigen::MatrixXd k(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    k(i, i) = sf * sf + noise_var_[i];
    for (Eigen::Index j = i + 1; j < m; ++j) {
      double d2 = 0.0;
      for (int t = 0; t < kBoDims; ++t) {
        const double d = (x_[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] -
                          x_[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)]) /
                         ls[static_cast<std::size_t>(t)];
        d2 += d * d;
      }
      const double v = sf * sf * std::exp(-0.5 * d2);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> local;
  bool ok = false;
  for (const double jitter : {1e-8, 1e-6, 1e-4, 1e-2}) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter * sf * sf;
    local.compute(kj);
    if (local.info() == Eigen::Success) {
      ok = true;
      break;
    }
  }
  if (!ok) return -std::numeric_limits<double>::infinity();

  const Eigen::VectorXd r = y_.array() - mean_;
  const Eigen::VectorXd alpha = local.solve(r);
  double log_det = 0.0;
  const auto& l = local.matrixLLT();
  for (Eigen::Index i = 0; i < m; ++i) log_det += std::log(l(i, i));
  double obj = -0.5 * r.dot(alpha) - log_det;
  // Weak lognormal hyperpriors keep the fit away from variance-collapsing
  // lengthscale estimates when few points are observed, while letting the
  // likelihood dominate once real structure accumulates: a misspecified
  // noise level then has to show up in the fit instead of being papered
  // over by regularization.
  const double zsf = (std::log(sf) - std::log(sd0_)) / 1.5;
  obj -= 0.5 * zsf * zsf;
  for (const double l_k : ls) {
    const double zl = (std::log(l_k) - std::log(0.4)) / 1.3;
    obj -= 0.5 * zl * zl;
  }
  if (llt != nullptr) *llt = std::move(local);
  return obj;
}

void GaussianProcess::finalize() {
  const double obj = fit_objective(sf_, ls_, &llt_);
  if (!std::isfinite(obj)) throw ContractError("kernel matrix factorization failed");
  alpha_ = llt_.solve(Eigen::VectorXd(y_.array() - mean_));
}

Eigen::VectorXd GaussianProcess::kernel_column(const Point& x) const {
  const auto m = static_cast<Eigen::Index>(x_.size());
  Eigen::VectorXd k(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double d2 = 0.0;
    for (int t = 0; t < kBoDims; ++t) {
      const double d = (x_[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] -
                        x[static_cast<std::size_t>(t)]) /
                       ls_[static_cast<std::size_t>(t)];
      d2 += d * d;
    }
    k[i] = sf_ * sf_ * std::exp(-0.5 * d2);
  }
  return k;
}

GaussianProcess::Posterior GaussianProcess::posterior(const Point& x) const {
  const Eigen::VectorXd k = kernel_column(x);
  Posterior out;
  out.mean = mean_ + k.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  out.var = std::max(sf_ * sf_ - v.squaredNorm(), 1e-12);
  return out;
}

BoTrace bo_minimize(const BoConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  const std::uint64_t eval_base = derive_stream(seed, kEvalSalt);
  SplitMix64 acq_rng(derive_stream(seed, kAcqSalt));

  BoTrace trace;
  std::vector<double> noise_vars;
  auto evaluate = [&](const Point& x, int index) {
    double value;
    double nv;
    if (cfg.noiseless) {
      value = composite_objective(x);
      nv = 1e-10;
    } else {
      const Evaluation ev =
          noisy_evaluate(x, cfg.noise_cov, cfg.samples_per_eval, cfg.bucket_count,
                         cfg.use_cov_term, derive_stream(eval_base, static_cast<std::uint64_t>(index)));
      value = ev.value;
      nv = ev.noise_var;
    }
    trace.points.push_back(x);
    trace.observed.push_back(value);
    noise_vars.push_back(nv);
    const double truth = composite_objective(x);
    const double prev = trace.best_true.empty()
                            ? std::numeric_limits<double>::infinity()
                            : trace.best_true.back();
    trace.best_true.push_back(std::min(prev, truth));
  };

  for (int i = 0; i < cfg.init_points; ++i) {
    evaluate(halton_point(static_cast<std::uint64_t>(i)), i);
  }

  for (int t = cfg.init_points; t < cfg.iterations; ++t) {
    const GaussianProcess gp(trace.points, trace.observed, noise_vars);

    double incumbent = std::numeric_limits<double>::infinity();
    Point best_mean_point = trace.points.front();
    for (const Point& x : trace.points) {
      const double mu = gp.posterior(x).mean;
      if (mu < incumbent) {
        incumbent = mu;
        best_mean_point = x;
      }
    }

    double y_mean = 0.0;
    for (const double y : trace.observed) y_mean += y;
    y_mean /= static_cast<double>(trace.observed.size());
    double y_var = 0.0;
    for (const double y : trace.observed) y_var += (y - y_mean) * (y - y_mean);
    y_var /= static_cast<double>(trace.observed.size());
    const double ei_floor = 1e-8 * std::max(std::sqrt(y_var), 1e-6);

    // Screen a mixed candidate pool, then polish the best few.
    std::vector<Point> pool;
    pool.reserve(static_cast<std::size_t>(cfg.pool_size) + 384);
    const std::uint64_t offset = acq_rng.below(1u << 20);
    for (int i = 0; i < cfg.pool_size; ++i) {
      pool.push_back(halton_point(offset + static_cast<std::uint64_t>(i)));
    }
    for (int i = 0; i < cfg.pool_size / 8; ++i) {
      Point x;
      for (double& v : x) v = acq_rng.uniform01();
      pool.push_back(x);
    }
    SplitMix64 jitter_rng(acq_rng.next());
    NormalSampler jitter;
    for (const double sigma : {0.07, 0.2}) {
      for (int i = 0; i < 64; ++i) {
        Point x = best_mean_point;
        for (double& v : x) v += sigma * jitter(jitter_rng);
        pool.push_back(clip_unit(x));
      }
    }

    const double nv_next = 0.0 *
        std::accumulate(noise_vars.begin(), noise_vars.end(), 0.0) /
        static_cast<double>(noise_vars.size());

    const bool explore_turn = false;

    const auto already_seen = [&](const Point& x) {
      for (const Point& seen : trace.points) {
        if (l1_distance(x, seen) < 1e-3) return true;
      }
      return false;
    };

    Point next{};
    bool found = false;
    std::vector<std::pair<double, Point>> refined;
    if (!explore_turn) {
      std::vector<double> scores(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        scores[i] = expected_improvement(gp, pool[i], incumbent, nv_next);
      }
      std::vector<std::size_t> order(pool.size());
      std::iota(order.begin(), order.end(), 0u);
      const auto top = static_cast<std::size_t>(
          std::min<std::size_t>(static_cast<std::size_t>(cfg.refine_count), order.size()));
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top),
                        order.end(),
                        [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

      refined.reserve(top);
      for (std::size_t c = 0; c < top; ++c) {
        Point x = pool[order[c]];
        double v = scores[order[c]];
        double step = 0.1;
        int guard = 0;
        while (step >= 0.002 && guard++ < 60) {
          double best_v = v;
          Point best_x = x;
          for (int k = 0; k < kBoDims; ++k) {
            for (const double sgn : {1.0, -1.0}) {
              Point cand = x;
              cand[static_cast<std::size_t>(k)] =
                  std::clamp(cand[static_cast<std::size_t>(k)] + sgn * step, 0.0, 1.0);
              const double cv = expected_improvement(gp, cand, incumbent, nv_next);
              if (cv > best_v) {
                best_v = cv;
                best_x = cand;
              }
            }
          }
          if (best_v > v) {
            v = best_v;
            x = best_x;
            step = std::min(step * 2.0, 0.2);
          } else {
            step *= 0.5;
          }
        }
        refined.emplace_back(v, x);
      }
      std::sort(refined.begin(), refined.end(),
                [](const auto& a, const auto& b) { return a.first > b.first; });

      // Avoid re-querying an already-observed input.
      for (const auto& [v, x] : refined) {
        if (v <= ei_floor) break;  // no meaningful improvement anywhere, explore instead
        if (already_seen(x)) continue;
        next = x;
        found = true;
        break;
      }
    }
    if (!found) {
      // Exploration turn, flat EI, or only duplicates: query where the model
      // is least certain.
      double best_var = -1.0;
      for (const Point& x : pool) {
        if (already_seen(x)) continue;
        const double var = gp.posterior(x).var;
        if (var > best_var) {
          best_var = var;
          next = x;
        }
      }
      if (best_var < 0.0) {
        for (double& v : next) v = acq_rng.uniform01();
      }
    }
    if (std::getenv("BUCKETCOV_BO_TRACE") != nullptr) {
      const auto post = gp.posterior(next);
      std::fprintf(stderr,
                   "t=%d sf=%.3f ls=[%.2f %.2f %.2f %.2f %.2f %.2f] inc=%.3f "
                   "ei=%.4g mu=%.3f sd=%.3f true=%.3f x=[%.2f %.2f %.2f %.2f %.2f "
                   "%.2f]\n",
                   t, gp.signal_sd(), gp.lengthscales()[0], gp.lengthscales()[1],
                   gp.lengthscales()[2], gp.lengthscales()[3], gp.lengthscales()[4],
                   gp.lengthscales()[5], incumbent,
                   refined.empty() ? -1.0 : refined.front().first, post.mean,
                   std::sqrt(post.var), composite_objective(next), next[0], next[1],
                   next[2], next[3], next[4], next[5]);
    }
    evaluate(next, t);
  }

  trace.final_best_true = trace.best_true.back();
  return trace;
}

}  // namespace bucketcov
