// SPDX-License-Identifier: Apache-2.0
//
// bucket-cov: covariance estimation for bucketed experiment data.
//
// Subcommands:
//   aggregate  raw observation CSV -> per-bucket aggregate CSV
//   estimate   aggregate or observation CSV -> covariance estimates (JSON)
//   simulate   built-in studies (table1..table4, bayesopt) -> JSON/CSV
//   bench      record-touch scaling comparison -> JSON/CSV
//
// Exit codes: 0 success, 1 contract violation (bad arguments or data that
// breaks an estimator precondition), 2 I/O failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bucketcov/aggregate.hpp"
#include "bucketcov/bayesopt.hpp"
#include "bucketcov/bench.hpp"
#include "bucketcov/config.hpp"
#include "bucketcov/covariance.hpp"
#include "bucketcov/cuped.hpp"
#include "bucketcov/errors.hpp"
#include "bucketcov/monitoring.hpp"
#include "bucketcov/population.hpp"
#include "bucketcov/rng.hpp"

namespace {

using bucketcov::Config;
using nlohmann::json;

struct GlobalOptions {
  std::string config_path;
  std::uint64_t seed = 1;
  bool seed_given = false;
  int threads = 1;
  int verbosity = 0;
  Config file_config;

  void load() {
    if (!config_path.empty()) file_config = Config::from_file(config_path);
    if (!seed_given) seed = file_config.get_uint64("seed", seed);
    threads = file_config.get_int("threads", threads);
    if (threads < 1) throw bucketcov::ContractError("threads must be >= 1");
  }

  void progress(const std::string& line) const {
    if (verbosity > 0) std::cerr << line << '\n';
  }
};

// Flag beats config file beats built-in default.
int resolve_int(const CLI::Option* opt, int flag_value, const Config& cfg,
                const std::string& key, int fallback) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  return cfg.get_int(key, fallback);
}

std::string resolve_string(const CLI::Option* opt, const std::string& flag_value,
                           const Config& cfg, const std::string& key,
                           const std::string& fallback) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  return cfg.get_string(key, fallback);
}

// Writes to the given path, or to stdout when the path is empty or "-".
void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    if (!std::cout) throw bucketcov::IoError("failed writing to stdout");
    return;
  }
  std::ofstream out(path);
  if (!out) throw bucketcov::IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw bucketcov::IoError("failed writing to: " + path);
}

json base_output(const std::string& command, const GlobalOptions& global) {
  json j;
  j["command"] = command;
  j["seed"] = global.seed;
  j["config"] = json::object();
  j["config"]["threads"] = global.threads;
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Shortest decimal form that round-trips (for CSV cells).
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------

int run_aggregate(const GlobalOptions& global, const std::string& input,
                  const std::string& output, int buckets, std::uint64_t bucket_seed) {
  const auto records = bucketcov::read_records_csv_file(input);
  const auto aggregates = bucketcov::aggregate(records, bucket_seed, buckets);
  std::vector<std::string> comments = {
      "command=aggregate",
      "buckets=" + std::to_string(buckets),
      "bucket_seed=" + std::to_string(bucket_seed),
      "seed=" + std::to_string(global.seed),
      "records=" + std::to_string(records.size()),
  };
  if (output.empty() || output == "-") {
    bucketcov::write_bucket_csv(std::cout, aggregates, comments);
  } else {
    bucketcov::write_bucket_csv_file(output, aggregates, comments);
  }
  return 0;
}

// True when the first non-comment line carries the aggregate header.
bool looks_like_bucket_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bucketcov::IoError("cannot open: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    return line == "group,metric,period,bucket,sum,count";
  }
  throw bucketcov::IoError("empty input: " + path);
}

struct UserTotals {
  double sum = 0.0;
  std::int64_t count = 0;
};
using KeyUserTotals = std::map<bucketcov::AggregateKey, std::map<std::string, UserTotals>>;

KeyUserTotals totals_by_user(const std::vector<bucketcov::ObservationRecord>& records) {
  KeyUserTotals out;
  for (const auto& r : records) {
    auto& t = out[{r.group, r.metric, r.period}][r.user];
    t.sum += r.value;
    ++t.count;
  }
  return out;
}

int run_estimate(const GlobalOptions& global, const std::string& input,
                 const std::string& output, const std::string& method, double ratio,
                 int buckets) {
  json out = base_output("estimate", global);
  out["config"]["input"] = input;
  out["config"]["method"] = method;
  out["config"]["correction_ratio"] = ratio;
  out["estimates"] = json::array();

  const bool bucket_input = looks_like_bucket_csv(input);
  if (method == "bucket") {
    bucketcov::AggregateMap aggregates;
    if (bucket_input) {
      aggregates = bucketcov::read_bucket_csv_file(input);
    } else {
      const auto records = bucketcov::read_records_csv_file(input);
      const std::uint64_t bucket_seed =
          global.file_config.get_uint64("bucket_seed", global.seed);
      aggregates = bucketcov::aggregate(records, bucket_seed, buckets);
      out["config"]["buckets"] = buckets;
      out["config"]["bucket_seed"] = bucket_seed;
    }
    if (aggregates.empty()) {
      throw bucketcov::ContractError("estimate: no aggregates found in " + input);
    }
    for (auto it = aggregates.begin(); it != aggregates.end(); ++it) {
      for (auto jt = it; jt != aggregates.end(); ++jt) {
        if (jt->first.group != it->first.group) continue;
        const auto est = bucketcov::estimate_cov_bucket(it->second, jt->second, ratio);
        json row;
        row["group"] = it->first.group;
        row["metric_x"] = it->first.metric;
        row["period_x"] = it->first.period;
        row["metric_y"] = jt->first.metric;
        row["period_y"] = jt->first.period;
        row["method"] = est.method;
        row["value"] = est.value;
        row["bucket_count"] = est.bucket_count;
        out["estimates"].push_back(row);
      }
    }
    write_output(output, dump(out));
    return 0;
  }

  // naive and dataaug need per-user observations.
  if (bucket_input) {
    throw bucketcov::ContractError("estimate: method '" + method +
                                   "' needs raw observations, not bucket aggregates");
  }
  const auto records = bucketcov::read_records_csv_file(input);
  const auto by_key = totals_by_user(records);
  if (by_key.empty()) {
    throw bucketcov::ContractError("estimate: no observations found in " + input);
  }
  for (auto it = by_key.begin(); it != by_key.end(); ++it) {
    for (auto jt = it; jt != by_key.end(); ++jt) {
      if (jt->first.group != it->first.group) continue;
      json row;
      row["group"] = it->first.group;
      row["metric_x"] = it->first.metric;
      row["period_x"] = it->first.period;
      row["metric_y"] = jt->first.metric;
      row["period_y"] = jt->first.period;
      if (method == "naive") {
        std::vector<double> xs, ys;
        for (const auto& [user, tx] : it->second) {
          const auto found = jt->second.find(user);
          if (found == jt->second.end()) continue;
          xs.push_back(tx.sum);
          ys.push_back(found->second.sum);
        }
        if (xs.size() < 2) continue;  // not enough common users for this pair
        row["method"] = "naive";
        row["value"] = bucketcov::estimate_cov_naive(xs, ys);
        row["common_users"] = xs.size();
      } else {
        std::map<std::string, bucketcov::AugmentedUser> merged;
        for (const auto& [user, tx] : it->second) {
          auto& a = merged[user];
          a.sum_x = tx.sum;
          a.cnt_x = static_cast<double>(tx.count);
        }
        for (const auto& [user, ty] : jt->second) {
          auto& a = merged[user];
          a.sum_y = ty.sum;
          a.cnt_y = static_cast<double>(ty.count);
        }
        if (merged.size() < 2) continue;
        std::vector<bucketcov::AugmentedUser> aug;
        aug.reserve(merged.size());
        for (const auto& [user, a] : merged) aug.push_back(a);
        row["method"] = "data_augmentation";
        row["value"] = bucketcov::estimate_cov_dataaug(aug);
        row["users"] = aug.size();
      }
      out["estimates"].push_back(row);
    }
  }
  write_output(output, dump(out));
  return 0;
}

// ---------------------------------------------------------------------------

bucketcov::PopulationSpec population_from_config(const Config& cfg) {
  bucketcov::PopulationSpec spec = bucketcov::PopulationSpec::defaults();
  const auto users = cfg.get_int("users", static_cast<int>(spec.user_count));
  if (users < 2) throw bucketcov::ContractError("users must be >= 2");
  spec.user_count = static_cast<std::size_t>(users);
  const double mean = cfg.get_double("mean", spec.mean[0]);
  const double var = cfg.get_double("var", spec.covariance(0, 0));
  const double corr = cfg.get_double("corr", spec.covariance(0, 1) / spec.covariance(0, 0));
  spec.mean = {mean, mean};
  spec.covariance.resize(2, 2);
  spec.covariance << var, corr * var, corr * var, var;
  spec.missingness = cfg.get_bool("missingness", spec.missingness);
  return spec;
}

void echo_population(json* cfg, const bucketcov::PopulationSpec& spec) {
  (*cfg)["users"] = spec.user_count;
  (*cfg)["mean"] = spec.mean[0];
  (*cfg)["var"] = spec.covariance(0, 0);
  (*cfg)["corr"] = spec.covariance(0, 1) / spec.covariance(0, 0);
  (*cfg)["missingness"] = spec.missingness;
}

int run_table1(const GlobalOptions& global, const std::string& output, int reps,
               int oracle_reps) {
  const Config& cfg = global.file_config;
  const auto spec = population_from_config(cfg);
  const double ratio = cfg.get_double("ratio", 0.1);
  std::vector<int> buckets = {100, 200, 500, 1000};

  const auto pop = bucketcov::generate_population(spec, global.seed);
  const auto result =
      bucketcov::compare_estimators(pop, ratio, buckets, reps, oracle_reps, global.seed);

  json out = base_output("simulate table1", global);
  echo_population(&out["config"], spec);
  out["config"]["ratio"] = ratio;
  out["config"]["reps"] = reps;
  out["config"]["oracle_reps"] = oracle_reps;
  out["oracle"] = {{"value", result.oracle.value},
                   {"se", result.oracle.se},
                   {"reps_used", result.oracle.reps_used},
                   {"discarded", result.oracle.discarded}};
  auto method = [&](const bucketcov::MethodStats& s) {
    return json{{"mean", s.mean},
                {"sd", s.sd},
                {"mean_over_oracle", s.mean / result.oracle.value}};
  };
  out["naive"] = method(result.naive);
  out["dataaug"] = method(result.dataaug);
  out["bucket"] = json::object();
  for (const auto& [b, s] : result.bucket) {
    out["bucket"][std::to_string(b)] = method(s);
  }
  write_output(output, dump(out));
  return 0;
}

int run_table2(const GlobalOptions& global, const std::string& output, int reps,
               int oracle_reps) {
  const Config& cfg = global.file_config;
  const auto spec = population_from_config(cfg);
  const std::vector<double> ratios = {0.2, 0.1, 0.05};

  const auto pop = bucketcov::generate_population(spec, global.seed);
  const auto rows =
      bucketcov::dataaug_bias_experiment(pop, ratios, reps, oracle_reps, global.seed);

  json out = base_output("simulate table2", global);
  echo_population(&out["config"], spec);
  out["config"]["reps"] = reps;
  out["config"]["oracle_reps"] = oracle_reps;
  out["rows"] = json::array();
  for (const auto& row : rows) {
    out["rows"].push_back({{"ratio", row.ratio},
                           {"truth", row.truth},
                           {"truth_se", row.truth_se},
                           {"dataaug_mean", row.dataaug_mean},
                           {"dataaug_sd", row.dataaug_sd},
                           {"bias_factor", row.bias_factor},
                           {"expected_bias_factor", 1.0}});
  }
  write_output(output, dump(out));
  return 0;
}

int run_table3(const GlobalOptions& global, const std::string& output, int reps,
               const std::string& format) {
  const Config& cfg = global.file_config;
  const int users = cfg.get_int("users", 10000);
  const std::vector<double> rhos = {0.3, 0.5, 0.6, 0.8};
  const std::vector<int> buckets = {50, 100, 200, 500, 1000};

  const auto cells =
      bucketcov::beta_accuracy_experiment(rhos, buckets, users, reps, global.seed);

  if (format == "csv") {
    std::ostringstream os;
    os << "# command=simulate table3\n";
    os << "# seed=" << global.seed << "\n";
    os << "# users=" << users << "\n";
    os << "# reps=" << reps << "\n";
    os << "rho,buckets,target_beta,mean_rel_error\n";
    for (const auto& cell : cells) {
      os << fmt_double(cell.rho) << ',' << cell.bucket_count << ','
         << fmt_double(cell.target_beta) << ',' << fmt_double(cell.mean_rel_error)
         << '\n';
    }
    write_output(output, os.str());
    return 0;
  }

  json out = base_output("simulate table3", global);
  out["config"]["users"] = users;
  out["config"]["reps"] = reps;
  out["cells"] = json::array();
  for (const auto& cell : cells) {
    out["cells"].push_back({{"rho", cell.rho},
                            {"buckets", cell.bucket_count},
                            {"target_beta", cell.target_beta},
                            {"mean_rel_error", cell.mean_rel_error}});
  }
  write_output(output, dump(out));
  return 0;
}

int run_table4(const GlobalOptions& global, const std::string& output,
               const std::string& mode, int buckets, int runs) {
  const Config& cfg = global.file_config;
  bucketcov::MonitorConfig mc;
  mc.days = cfg.get_int("days", mc.days);
  mc.users = cfg.get_int("users", mc.users);
  mc.bucket_count = buckets;
  mc.mu1 = cfg.get_double("mu1", mc.mu1);
  mc.day_var = cfg.get_double("day_var", mc.day_var);
  mc.day_corr = cfg.get_double("day_corr", mc.day_corr);
  mc.threshold = cfg.get_double("threshold", mc.threshold);

  json out = base_output("simulate table4", global);
  out["config"]["days"] = mc.days;
  out["config"]["users"] = mc.users;
  out["config"]["buckets"] = mc.bucket_count;
  out["config"]["mu0"] = mc.mu0;
  out["config"]["mu1"] = mc.mu1;
  out["config"]["day_var"] = mc.day_var;
  out["config"]["day_corr"] = mc.day_corr;
  out["config"]["threshold"] = mc.threshold;
  out["config"]["runs_per_hypothesis"] = runs;
  out["config"]["mode"] = mode;
  out["modes"] = json::object();
  const std::pair<const char*, bucketcov::CovarianceMode> modes[] = {
      {"independent", bucketcov::CovarianceMode::kIndependent},
      {"true", bucketcov::CovarianceMode::kTrueCov},
      {"estimated", bucketcov::CovarianceMode::kEstimatedCov},
  };
  for (const auto& [name, m] : modes) {
    if (mode != "all" && mode != name) continue;
    global.progress(std::string("table4 mode=") + name);
    mc.mode = m;
    const auto res = bucketcov::fdr_experiment(mc, runs, global.seed);
    out["modes"][name] = {{"fdr", res.fdr},
                          {"power", res.power},
                          {"mean_stop_day", res.mean_stop_day},
                          {"rejections_h0", res.rejections_h0},
                          {"rejections_h1", res.rejections_h1},
                          {"invalid_runs", res.invalid_runs},
                          {"zero_rejections", res.zero_rejections}};
  }
  write_output(output, dump(out));
  return 0;
}

int run_bayesopt(const GlobalOptions& global, const std::string& output,
                 const std::string& mode, int iterations, int seeds,
                 const std::string& noise, const std::string& format) {
  const Config& cfg = global.file_config;
  bucketcov::BoConfig bo;
  bo.iterations = iterations;
  bo.samples_per_eval = cfg.get_int("samples", bo.samples_per_eval);
  bo.bucket_count = cfg.get_int("buckets", bo.bucket_count);
  bo.pool_size = cfg.get_int("pool", bo.pool_size);
  bo.refine_count = cfg.get_int("refine", bo.refine_count);
  if (seeds < 1) throw bucketcov::ContractError("seeds must be >= 1");
  if (noise == "pos") {
    bo.noise_cov = bucketcov::positive_noise_cov();
  } else if (noise == "neg") {
    bo.noise_cov = bucketcov::negative_noise_cov();
  } else if (noise == "none") {
    bo.noiseless = true;
  } else {
    throw bucketcov::ContractError("noise must be one of pos|neg|none");
  }
  if (mode != "with" && mode != "without" && mode != "both") {
    throw bucketcov::ContractError("mode must be one of with|without|both");
  }

  struct TraceRow {
    int seed_index;
    std::string mode;
    bucketcov::BoTrace trace;
  };
  std::vector<TraceRow> rows;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t run_seed = bucketcov::derive_stream(global.seed, s);
    for (const bool with_cov : {true, false}) {
      if (bo.noiseless && !with_cov) break;  // no noise model, the term is irrelevant
      if (!bo.noiseless && mode == "with" && !with_cov) continue;
      if (!bo.noiseless && mode == "without" && with_cov) continue;
      bo.use_cov_term = with_cov;
      global.progress("bayesopt seed " + std::to_string(s) + " mode " +
                      (with_cov ? "with" : "without"));
      rows.push_back({s, bo.noiseless ? "noiseless" : (with_cov ? "with" : "without"),
                      bucketcov::bo_minimize(bo, run_seed)});
    }
  }

  if (format == "csv") {
    std::ostringstream os;
    os << "# command=simulate bayesopt\n";
    os << "# seed=" << global.seed << "\n";
    os << "# iterations=" << bo.iterations << "\n";
    os << "# samples=" << bo.samples_per_eval << "\n";
    os << "# buckets=" << bo.bucket_count << "\n";
    os << "# noise=" << noise << "\n";
    os << "# seeds=" << seeds << "\n";
    os << "# objective_minimum=" << fmt_double(-9.967104) << "\n";
    os << "seed_index,mode,iteration,best_true\n";
    for (const auto& row : rows) {
      for (std::size_t t = 0; t < row.trace.best_true.size(); ++t) {
        os << row.seed_index << ',' << row.mode << ',' << t + 1 << ','
           << fmt_double(row.trace.best_true[t]) << '\n';
      }
    }
    write_output(output, os.str());
    return 0;
  }

  json out = base_output("simulate bayesopt", global);
  out["config"]["iterations"] = bo.iterations;
  out["config"]["samples"] = bo.samples_per_eval;
  out["config"]["buckets"] = bo.bucket_count;
  out["config"]["noise"] = noise;
  out["config"]["mode"] = mode;
  out["config"]["bo_seeds"] = seeds;
  out["objective_minimum"] = -9.967104;
  json runs = json::array();
  for (int s = 0; s < seeds; ++s) {
    json run;
    run["seed_index"] = s;
    bool any = false;
    for (const auto& row : rows) {
      if (row.seed_index != s) continue;
      json t;
      t["best_true"] = row.trace.best_true;
      t["final_best_true"] = row.trace.final_best_true;
      const std::string key = row.mode == "noiseless"
                                  ? "trace"
                                  : (row.mode == "with" ? "with_cov_term"
                                                        : "without_cov_term");
      run[key] = t;
      any = true;
    }
    if (any) runs.push_back(run);
  }
  out["runs"] = runs;
  write_output(output, dump(out));
  return 0;
}

int run_bench(const GlobalOptions& global, const std::string& output, int max_days,
              int users, const std::string& method, const std::string& format) {
  const Config& cfg = global.file_config;
  const int buckets = cfg.get_int("buckets", 100);
  if (max_days < 2) throw bucketcov::ContractError("days must be >= 2");
  if (method != "bucket" && method != "join" && method != "both") {
    throw bucketcov::ContractError("method must be one of bucket|join|both");
  }
  std::vector<int> day_counts;
  for (int d = 2; d <= max_days; ++d) day_counts.push_back(d);

  const auto result = bucketcov::run_benchmark(users, day_counts, buckets, global.seed);
  const bool want_bucket = method != "join";
  const bool want_join = method != "bucket";

  if (format == "csv") {
    std::ostringstream os;
    os << "# command=bench\n";
    os << "# seed=" << global.seed << "\n";
    os << "# users=" << users << "\n";
    os << "# buckets=" << buckets << "\n";
    os << "# method=" << method << "\n";
    if (want_bucket) {
      os << "# bucket_touch_fit_slope=" << fmt_double(result.bucket_touch_fit.slope)
         << "\n";
      os << "# bucket_touch_fit_r2=" << fmt_double(result.bucket_touch_fit.r2) << "\n";
    }
    os << "days";
    if (want_bucket) os << ",bucket_touches,bucket_seconds";
    if (want_join) os << ",join_touches,join_pairs,join_seconds";
    os << "\n";
    for (const auto& p : result.points) {
      os << p.days;
      if (want_bucket) {
        os << ',' << p.bucket_touches << ',' << fmt_double(p.bucket_seconds);
      }
      if (want_join) {
        os << ',' << p.join_touches << ',' << p.join_pairs << ','
           << fmt_double(p.join_seconds);
      }
      os << '\n';
    }
    write_output(output, os.str());
    return 0;
  }

  json out = base_output("bench", global);
  out["config"]["users"] = users;
  out["config"]["buckets"] = buckets;
  out["config"]["method"] = method;
  out["points"] = json::array();
  for (const auto& p : result.points) {
    json row;
    row["days"] = p.days;
    if (want_bucket) {
      row["bucket_touches"] = p.bucket_touches;
      row["bucket_seconds"] = p.bucket_seconds;
    }
    if (want_join) {
      row["join_touches"] = p.join_touches;
      row["join_pairs"] = p.join_pairs;
      row["join_seconds"] = p.join_seconds;
    }
    out["points"].push_back(row);
  }
  if (want_bucket) {
    out["bucket_touch_fit"] = {{"slope", result.bucket_touch_fit.slope},
                               {"intercept", result.bucket_touch_fit.intercept},
                               {"r2", result.bucket_touch_fit.r2}};
  }
  write_output(output, dump(out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance estimation for bucketed experiment data"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  app.add_option("--config", global.config_path, "key=value configuration file");
  auto* seed_opt = app.add_option("--seed", global.seed, "master random seed");
  app.add_option("--threads", global.threads,
                 "worker threads (reserved; execution is single-threaded)");
  app.add_flag("-v,--verbose", global.verbosity, "progress lines on stderr");

  std::string agg_input, agg_output;
  int agg_buckets = 100;
  std::uint64_t agg_bucket_seed = 0;
  auto* agg = app.add_subcommand("aggregate", "Aggregate raw observations into buckets");
  agg->fallthrough();
  agg->add_option("--in,--input", agg_input, "raw observation CSV")->required();
  agg->add_option("--out,--output", agg_output, "aggregate CSV ('-' for stdout)");
  agg->add_option("--buckets", agg_buckets, "number of buckets");
  auto* agg_seed_opt =
      agg->add_option("--bucket-seed", agg_bucket_seed, "hash seed for bucketing");

  std::string est_input, est_output, est_method = "bucket";
  double est_ratio = 0.0;
  int est_buckets = 100;
  auto* est = app.add_subcommand("estimate", "Estimate covariances from experiment data");
  est->fallthrough();
  est->add_option("--in,--input", est_input, "aggregate CSV or raw observation CSV")
      ->required();
  est->add_option("--out,--output", est_output, "JSON output ('-' for stdout)");
  est->add_option("--method", est_method, "estimator")
      ->check(CLI::IsMember({"bucket", "naive", "dataaug"}));
  est->add_option("--ratio", est_ratio, "group assignment probability in [0, 1)");
  est->add_option("--buckets", est_buckets,
                  "buckets used when raw observations feed the bucket method");

  std::string sim_output, sim_format = "json";
  auto* sim = app.add_subcommand("simulate", "Run a built-in simulation study");
  sim->require_subcommand(1);
  sim->fallthrough();
  sim->add_option("--out,--output", sim_output, "output path ('-' for stdout)");
  sim->add_option("--format", sim_format, "output format")
      ->check(CLI::IsMember({"json", "csv"}));

  int t1_reps = 10000, t1_oracle_reps = 100000;
  auto* sim_t1 = sim->add_subcommand("table1", "Estimator comparison on one population");
  sim_t1->fallthrough();
  auto* t1_reps_opt = sim_t1->add_option("--reps", t1_reps, "estimator repetitions");
  auto* t1_oracle_opt =
      sim_t1->add_option("--oracle-reps", t1_oracle_reps, "oracle repetitions");

  int t2_reps = 10000, t2_oracle_reps = 100000;
  auto* sim_t2 = sim->add_subcommand("table2", "Bias of the data-augmentation baseline");
  sim_t2->fallthrough();
  auto* t2_reps_opt = sim_t2->add_option("--reps", t2_reps, "estimator repetitions");
  auto* t2_oracle_opt =
      sim_t2->add_option("--oracle-reps", t2_oracle_reps, "oracle repetitions");

  int t3_reps = 2000;
  auto* sim_t3 = sim->add_subcommand("table3", "Accuracy of the adjustment coefficient");
  sim_t3->fallthrough();
  auto* t3_reps_opt = sim_t3->add_option("--reps", t3_reps, "repetitions per grid cell");

  std::string t4_mode = "all";
  int t4_buckets = 300, t4_runs = 2000;
  auto* sim_t4 = sim->add_subcommand("table4", "Sequential monitor error rates");
  sim_t4->fallthrough();
  auto* t4_mode_opt = sim_t4->add_option("--mode", t4_mode, "covariance model")
                          ->check(CLI::IsMember({"independent", "true", "estimated", "all"}));
  auto* t4_buckets_opt =
      sim_t4->add_option("--buckets", t4_buckets, "buckets for the estimated model");
  auto* t4_runs_opt = sim_t4->add_option("--runs", t4_runs, "runs per hypothesis");

  std::string bo_mode = "both", bo_noise = "pos";
  int bo_iters = 50, bo_seeds = 5;
  auto* sim_bo = sim->add_subcommand("bayesopt", "Metric tuning with noisy evaluations");
  sim_bo->fallthrough();
  auto* bo_mode_opt = sim_bo->add_option("--mode", bo_mode, "noise model term")
                          ->check(CLI::IsMember({"with", "without", "both"}));
  auto* bo_iters_opt = sim_bo->add_option("--iters", bo_iters, "evaluation budget per run");
  auto* bo_seeds_opt = sim_bo->add_option("--seeds", bo_seeds, "independent runs");
  auto* bo_noise_opt = sim_bo->add_option("--noise", bo_noise, "metric noise covariance")
                           ->check(CLI::IsMember({"pos", "neg", "none"}));

  std::string bench_output, bench_format = "json", bench_method = "both";
  int bench_days = 8, bench_users = 5000;
  auto* bench = app.add_subcommand("bench", "Record-touch scaling comparison");
  bench->fallthrough();
  bench->add_option("--out,--output", bench_output, "output path ('-' for stdout)");
  bench->add_option("--format", bench_format, "output format")
      ->check(CLI::IsMember({"json", "csv"}));
  auto* bench_days_opt =
      bench->add_option("--days", bench_days, "largest day count (scans 2..N)");
  auto* bench_users_opt = bench->add_option("--users", bench_users, "users per day");
  auto* bench_method_opt = bench->add_option("--method", bench_method, "path to report")
                               ->check(CLI::IsMember({"bucket", "join", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    global.seed_given = seed_opt->count() > 0;
    global.load();
    const Config& cfg = global.file_config;
    if (agg->parsed()) {
      if (agg_seed_opt->count() == 0) {
        agg_bucket_seed = cfg.get_uint64("bucket_seed", global.seed);
      }
      return run_aggregate(global, agg_input, agg_output, agg_buckets, agg_bucket_seed);
    }
    if (est->parsed()) {
      return run_estimate(global, est_input, est_output, est_method, est_ratio,
                          est_buckets);
    }
    if (sim->parsed()) {
      if (sim_t1->parsed()) {
        return run_table1(global, sim_output,
                          resolve_int(t1_reps_opt, t1_reps, cfg, "reps", 10000),
                          resolve_int(t1_oracle_opt, t1_oracle_reps, cfg, "oracle_reps",
                                      100000));
      }
      if (sim_t2->parsed()) {
        return run_table2(global, sim_output,
                          resolve_int(t2_reps_opt, t2_reps, cfg, "reps", 10000),
                          resolve_int(t2_oracle_opt, t2_oracle_reps, cfg, "oracle_reps",
                                      100000));
      }
      if (sim_t3->parsed()) {
        return run_table3(global, sim_output,
                          resolve_int(t3_reps_opt, t3_reps, cfg, "reps", 2000),
                          sim_format);
      }
      if (sim_t4->parsed()) {
        return run_table4(global, sim_output,
                          resolve_string(t4_mode_opt, t4_mode, cfg, "mode", "all"),
                          resolve_int(t4_buckets_opt, t4_buckets, cfg, "buckets", 300),
                          resolve_int(t4_runs_opt, t4_runs, cfg, "runs", 2000));
      }
      if (sim_bo->parsed()) {
        return run_bayesopt(
            global, sim_output, resolve_string(bo_mode_opt, bo_mode, cfg, "mode", "both"),
            resolve_int(bo_iters_opt, bo_iters, cfg, "iterations", 50),
            resolve_int(bo_seeds_opt, bo_seeds, cfg, "bo_seeds", 5),
            resolve_string(bo_noise_opt, bo_noise, cfg, "noise", "pos"), sim_format);
      }
    }
    if (bench->parsed()) {
      return run_bench(global, bench_output,
                       resolve_int(bench_days_opt, bench_days, cfg, "days", 8),
                       resolve_int(bench_users_opt, bench_users, cfg, "users", 5000),
                       resolve_string(bench_method_opt, bench_method, cfg, "method",
                                      "both"),
                       bench_format);
    }
    throw bucketcov::ContractError("no subcommand selected");
  } catch (const bucketcov::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 2;
  } catch (const bucketcov::ContractError& e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
