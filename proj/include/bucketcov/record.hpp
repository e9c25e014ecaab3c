// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <string>

namespace bucketcov {

// One observed metric value for one user in one period.
struct ObservationRecord {
  std::string user;
  std::string group;
  std::string metric;
  std::string period;
  double value = 0.0;
};

// Aggregates are keyed by everything except the user.
struct AggregateKey {
  std::string group;
  std::string metric;
  std::string period;

  auto operator<=>(const AggregateKey&) const = default;
};

}  // namespace bucketcov
