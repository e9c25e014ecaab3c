// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/aggregate.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "bucketcov/errors.hpp"
#include "bucketcov/hash.hpp"

namespace bucketcov {

namespace {

constexpr std::string_view kHeader = "group,metric,period,bucket,sum,count";
constexpr std::string_view kRecordHeader = "user,group,metric,period,value";

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

void require_plain_name(const std::string& name, const char* what) {
  if (name.empty() || name.find(',') != std::string::npos ||
      name.find('\n') != std::string::npos) {
    throw ContractError(std::string("aggregate: ") + what +
                        " must be non-empty and free of ',' and newlines: '" + name + "'");
  }
}

}  // namespace

double BucketAggregate::total_sum() const {
  KahanAccumulator acc;
  for (double s : sums) acc.add(s);
  return acc.sum;
}

std::int64_t BucketAggregate::total_count() const {
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  return total;
}

AggregateMap aggregate(std::span<const ObservationRecord> records,
                       std::uint64_t bucket_seed, int bucket_count) {
  if (bucket_count < 2) {
    throw ContractError("aggregate: bucket_count must be >= 2");
  }
  std::map<AggregateKey, std::vector<KahanAccumulator>> sums;
  AggregateMap out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (!std::isfinite(rec.value)) {
      throw ContractError("aggregate: non-finite value at record index " + std::to_string(i) +
                          " (user '" + rec.user + "')");
    }
    require_plain_name(rec.group, "group");
    require_plain_name(rec.metric, "metric");
    require_plain_name(rec.period, "period");
    const AggregateKey key{rec.group, rec.metric, rec.period};
    auto [it, inserted] = out.try_emplace(key);
    if (inserted) {
      it->second.bucket_count = bucket_count;
      it->second.sums.assign(static_cast<std::size_t>(bucket_count), 0.0);
      it->second.counts.assign(static_cast<std::size_t>(bucket_count), 0);
      sums[key].assign(static_cast<std::size_t>(bucket_count), KahanAccumulator{});
    }
    const auto b = static_cast<std::size_t>(assign_bucket(rec.user, bucket_seed, bucket_count));
    sums[key][b].add(rec.value);
    it->second.counts[b] += 1;
  }
  for (auto& [key, agg] : out) {
    const auto& acc = sums[key];
    for (std::size_t b = 0; b < acc.size(); ++b) agg.sums[b] = acc[b].sum;
  }
  return out;
}

void write_bucket_csv(std::ostream& out, const AggregateMap& aggregates,
                      std::span<const std::string> comment_lines) {
  for (const auto& line : comment_lines) {
    out << "# " << line << '\n';
  }
  out << kHeader << '\n';
  for (const auto& [key, agg] : aggregates) {
    for (int b = 0; b < agg.bucket_count; ++b) {
      out << key.group << ',' << key.metric << ',' << key.period << ',' << b << ','
          << format_double(agg.sums[static_cast<std::size_t>(b)]) << ','
          << agg.counts[static_cast<std::size_t>(b)] << '\n';
    }
  }
  if (!out) {
    throw IoError("write_bucket_csv: stream failure while writing aggregates");
  }
}

AggregateMap read_bucket_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;

  struct Partial {
    std::vector<double> sums;
    std::vector<std::int64_t> counts;
    std::vector<char> present;
  };
  std::map<AggregateKey, Partial> partials;

  auto fail = [&](const std::string& why) -> void {
    throw IoError("read_bucket_csv: line " + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kHeader) fail("expected header '" + std::string(kHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() != 6) fail("expected 6 fields, found " + std::to_string(fields.size()));

    AggregateKey key{std::string(fields[0]), std::string(fields[1]), std::string(fields[2])};
    long bucket = 0;
    {
      auto [p, ec] = std::from_chars(fields[3].begin(), fields[3].end(), bucket);
      if (ec != std::errc{} || p != fields[3].end() || bucket < 0) fail("invalid bucket index");
    }
    double sum = 0.0;
    {
      auto [p, ec] = std::from_chars(fields[4].begin(), fields[4].end(), sum);
      if (ec != std::errc{} || p != fields[4].end()) fail("invalid sum");
    }
    std::int64_t count = 0;
    {
      auto [p, ec] = std::from_chars(fields[5].begin(), fields[5].end(), count);
      if (ec != std::errc{} || p != fields[5].end() || count < 0) fail("invalid count");
    }

    auto& part = partials[key];
    const auto idx = static_cast<std::size_t>(bucket);
    if (idx >= part.present.size()) {
      part.sums.resize(idx + 1, 0.0);
      part.counts.resize(idx + 1, 0);
      part.present.resize(idx + 1, 0);
    }
    if (part.present[idx]) fail("duplicate bucket index " + std::to_string(bucket));
    part.present[idx] = 1;
    part.sums[idx] = sum;
    part.counts[idx] = count;
  }
  if (!header_seen) {
    throw IoError("read_bucket_csv: missing header");
  }

  AggregateMap out;
  for (auto& [key, part] : partials) {
    for (std::size_t b = 0; b < part.present.size(); ++b) {
      if (!part.present[b]) {
        throw IoError("read_bucket_csv: key (" + key.group + "," + key.metric + "," +
                      key.period + ") is missing bucket " + std::to_string(b) +
                      "; bucket indices must cover 0.." +
                      std::to_string(part.present.size() - 1));
      }
    }
    BucketAggregate agg;
    agg.bucket_count = static_cast<int>(part.present.size());
    agg.sums = std::move(part.sums);
    agg.counts = std::move(part.counts);
    out.emplace(key, std::move(agg));
  }
  return out;
}

AggregateMap read_bucket_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_bucket_csv(in);
}

void write_bucket_csv_file(const std::string& path, const AggregateMap& aggregates,
                           std::span<const std::string> comment_lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_bucket_csv(out, aggregates, comment_lines);
}

void write_records_csv(std::ostream& out, std::span<const ObservationRecord> records,
                       std::span<const std::string> comment_lines) {
  for (const auto& line : comment_lines) {
    out << "# " << line << '\n';
  }
  out << kRecordHeader << '\n';
  for (const auto& rec : records) {
    out << rec.user << ',' << rec.group << ',' << rec.metric << ',' << rec.period << ','
        << format_double(rec.value) << '\n';
  }
  if (!out) {
    throw IoError("write_records_csv: stream failure while writing records");
  }
}

std::vector<ObservationRecord> read_records_csv(std::istream& in) {
  std::vector<ObservationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto fail = [&](const std::string& why) -> void {
    throw IoError("read_records_csv: line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kRecordHeader) fail("expected header '" + std::string(kRecordHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() != 5) fail("expected 5 fields, found " + std::to_string(fields.size()));
    ObservationRecord rec;
    rec.user = std::string(fields[0]);
    rec.group = std::string(fields[1]);
    rec.metric = std::string(fields[2]);
    rec.period = std::string(fields[3]);
    if (rec.user.empty()) fail("empty user id");
    auto [p, ec] = std::from_chars(fields[4].begin(), fields[4].end(), rec.value);
    if (ec != std::errc{} || p != fields[4].end()) fail("invalid value");
    records.push_back(std::move(rec));
  }
  if (!header_seen) {
    throw IoError("read_records_csv: missing header");
  }
  return records;
}

std::vector<ObservationRecord> read_records_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_records_csv(in);
}

void write_records_csv_file(const std::string& path,
                            std::span<const ObservationRecord> records,
                            std::span<const std::string> comment_lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_records_csv(out, records, comment_lines);
}

BucketAggregate merge(const BucketAggregate& a, const BucketAggregate& b) {
  if (a.bucket_count != b.bucket_count) {
    throw ContractError("merge: bucket counts differ (" + std::to_string(a.bucket_count) +
                        " vs " + std::to_string(b.bucket_count) + ")");
  }
  BucketAggregate out = a;
  for (std::size_t i = 0; i < out.sums.size(); ++i) {
    out.sums[i] += b.sums[i];
    out.counts[i] += b.counts[i];
  }
  return out;
}

}  // namespace bucketcov
