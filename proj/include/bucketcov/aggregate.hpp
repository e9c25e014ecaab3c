// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bucketcov/record.hpp"

namespace bucketcov {

// Compensated accumulator; the correction term keeps bucket sums stable when
// many small values land in one bucket.
struct KahanAccumulator {
  double sum = 0.0;
  double compensation = 0.0;

  void add(double value) {
    const double y = value - compensation;
    const double t = sum + y;
    compensation = (t - sum) - y;
    sum = t;
  }
};

// Per-bucket sums and observation counts for one (group, metric, period) key.
struct BucketAggregate {
  int bucket_count = 0;
  std::vector<double> sums;
  std::vector<std::int64_t> counts;

  double total_sum() const;
  std::int64_t total_count() const;
};

using AggregateMap = std::map<AggregateKey, BucketAggregate>;

// Buckets every record by hashing its user id with `bucket_seed` and folds
// values into per-bucket compensated sums. Every key carries all
// `bucket_count` buckets, including empty ones. Non-finite values are
// rejected with the offending record's position in the stream.
AggregateMap aggregate(std::span<const ObservationRecord> records,
                       std::uint64_t bucket_seed, int bucket_count);

// CSV layout: header `group,metric,period,bucket,sum,count`, one row per
// (key, bucket). Sums are written with shortest round-trip precision, so
// write followed by read reproduces the aggregates exactly. Lines starting
// with '#' are metadata comments and are skipped on read.
void write_bucket_csv(std::ostream& out, const AggregateMap& aggregates,
                      std::span<const std::string> comment_lines = {});
AggregateMap read_bucket_csv(std::istream& in);

AggregateMap read_bucket_csv_file(const std::string& path);
void write_bucket_csv_file(const std::string& path, const AggregateMap& aggregates,
                           std::span<const std::string> comment_lines = {});

// Combines aggregates of the same key produced with the same bucket count and
// bucket seed (e.g. shards of one record stream).
BucketAggregate merge(const BucketAggregate& a, const BucketAggregate& b);

// Raw observation CSV: header `user,group,metric,period,value`, one row per
// record. Same comment convention as the bucket CSV.
void write_records_csv(std::ostream& out, std::span<const ObservationRecord> records,
                       std::span<const std::string> comment_lines = {});
std::vector<ObservationRecord> read_records_csv(std::istream& in);

std::vector<ObservationRecord> read_records_csv_file(const std::string& path);
void write_records_csv_file(const std::string& path,
                            std::span<const ObservationRecord> records,
                            std::span<const std::string> comment_lines = {});

}  // namespace bucketcov
