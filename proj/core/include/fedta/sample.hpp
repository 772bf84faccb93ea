#pragma once

#include <cstdint>
#include <vector>

#include "fedta/numkit.hpp"

namespace fedta {

struct LabeledSample {
  std::int64_t sample_id = 0;
  int label = 0;
  Vec features;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

using Dataset = std::vector<LabeledSample>;

}  // namespace fedta
