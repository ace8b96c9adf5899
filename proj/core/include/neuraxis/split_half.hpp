#pragma once

#include <cstdint>
#include <vector>

#include "neuraxis/atlas.hpp"

namespace neuraxis::atlas {

struct SplitReport {
  std::vector<double> abs_r_mean;    // per axis of the odd-half basis
  std::vector<double> abs_r_spread;  // half absolute difference between directions
  double mean_abs_r = 0.0;
  int n_odd = 0;
  int n_even = 0;
  std::int64_t shared_words = 0;
};

// Odd/even subject split (by list position): averages each half, fits axes on
// one half, scores the other, matches by correlation, and reports per-axis
// |r| as mean +/- spread over the two fit directions.
SplitReport split_half(const std::vector<WordAtlas>& atlases, int n_axes, std::uint64_t seed);

}  // namespace neuraxis::atlas
