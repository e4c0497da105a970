#pragma once

// Brute-force references the library is checked against.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "dq/quant.hpp"

namespace dq::testing {

// Scans every level of the grid; on equal distance the later (upper) level wins.
template <typename T>
T nearest_level(T x, int bits, T range) {
  const int n = (1 << bits) - 1;
  T best = 0;
  T best_d = std::numeric_limits<T>::infinity();
  for (int i = 0; i <= n; ++i) {
    const T level = grid_level(i, n, range);
    const T d = std::abs(x - level);
    if (d <= best_d) {
      best_d = d;
      best = level;
    }
  }
  return best;
}

// 2x2 window median of one [H,W] plane, windows anchored top-left with the
// last row and column replicated.
inline std::vector<float> median_plane(const std::vector<float>& plane, std::size_t h, std::size_t w) {
  std::vector<float> out(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t i2 = std::min(i + 1, h - 1), j2 = std::min(j + 1, w - 1);
      std::array<float, 4> win{plane[i * w + j], plane[i * w + j2], plane[i2 * w + j], plane[i2 * w + j2]};
      std::sort(win.begin(), win.end());
      out[i * w + j] = (win[1] + win[2]) / 2;
    }
  return out;
}

}  // namespace dq::testing
