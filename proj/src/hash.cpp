// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/hash.hpp"

#include <cmath>
#include <cstring>

#include "bucketcov/errors.hpp"

namespace bucketcov {

std::uint64_t murmur64a(std::string_view key, std::uint64_t seed) {
  constexpr std::uint64_t m = 0xc6a4a7935bd1e995ull;
  constexpr int r = 47;

  const auto len = key.size();
  std::uint64_t h = seed ^ (static_cast<std::uint64_t>(len) * m);

  const char* data = key.data();
  const char* end = data + (len & ~std::size_t{7});
  while (data != end) {
    std::uint64_t k;
    std::memcpy(&k, data, 8);  // little-endian load
    data += 8;
    k *= m;
    k ^= k >> r;
    k *= m;
    h ^= k;
    h *= m;
  }

  const auto tail = len & 7;
  if (tail != 0) {
    std::uint64_t k = 0;
    std::memcpy(&k, data, tail);
    h ^= k;
    h *= m;
  }

  h ^= h >> r;
  h *= m;
  h ^= h >> r;
  return h;
}

std::uint64_t hash_mod(std::string_view unit, std::uint64_t seed, std::uint64_t modulus) {
  if (modulus == 0) {
    throw ContractError("hash_mod: modulus must be >= 1");
  }
  return murmur64a(unit, seed) % modulus;
}

GroupAssignment assign_group(std::string_view unit, std::uint64_t seed, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw ContractError("assign_group: ratio must lie in (0, 1]");
  }
  // Rounding keeps ratios that are exact multiples of 1/kRatioResolution
  // exact (0.1 * 10000 is 1000.0000000000001 in binary floating point).
  const auto threshold =
      static_cast<std::uint64_t>(std::llround(ratio * static_cast<double>(kRatioResolution)));
  GroupAssignment out;
  out.ratio = ratio;
  if (hash_mod(unit, seed, kRatioResolution) < threshold) {
    out.group = 1;
  }
  return out;
}

int assign_bucket(std::string_view unit, std::uint64_t seed, int bucket_count) {
  if (bucket_count < 1) {
    throw ContractError("assign_bucket: bucket_count must be >= 1");
  }
  return static_cast<int>(hash_mod(unit, seed, static_cast<std::uint64_t>(bucket_count)));
}

}  // namespace bucketcov
