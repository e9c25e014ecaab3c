// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace bucketcov {

// Resolution of group ratios: ratios are supported in steps of 1/10000.
inline constexpr std::uint64_t kRatioResolution = 10000;

// MurmurHash64A over the bytes of `key`. Fixed algorithm and constants so
// that assignments are reproducible across processes and platforms.
std::uint64_t murmur64a(std::string_view key, std::uint64_t seed);

// Hash of `unit` reduced modulo `modulus`. modulus must be >= 1; a modulus of
// 1 maps every unit to 0.
std::uint64_t hash_mod(std::string_view unit, std::uint64_t seed, std::uint64_t modulus);

struct GroupAssignment {
  // 1 when the unit falls inside the experiment group, empty otherwise.
  std::optional<int> group;
  double ratio = 0.0;
};

// Assigns `unit` to the experiment group with probability `ratio` over the
// hash stream identified by `seed`. ratio must lie in (0, 1]. Assignment is
// monotone in the ratio: a unit inside the group at ratio r stays inside the
// group at any ratio r' >= r under the same seed.
GroupAssignment assign_group(std::string_view unit, std::uint64_t seed, double ratio);

// Uniformly assigns `unit` to one of `bucket_count` buckets (>= 1). Distinct
// seeds give independent bucketings.
int assign_bucket(std::string_view unit, std::uint64_t seed, int bucket_count);

}  // namespace bucketcov
