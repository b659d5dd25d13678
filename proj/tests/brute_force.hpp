#pragma once

// Reference implementations used only as test oracles. Written from the
// definitions, without calling into the library's selection code.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "protoseg/layer_analysis.hpp"

namespace brute {

using protoseg::EpisodeTable;
using protoseg::kHeuristicCount;

struct Choice {
  std::array<int, kHeuristicCount> level{};
  double mean_miou = -1.0;
};

/// Per-layer score for integer weight levels (weight = level / n).
inline std::vector<double> layer_scores(const EpisodeTable& t, const std::array<int, kHeuristicCount>& level, int n,
                                        const std::array<int, kHeuristicCount>& dir,
                                        const std::array<bool, kHeuristicCount>& log1p) {
  const std::size_t L = t.heuristics.size();
  std::vector<double> score(L, 0.0);
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    if (level[m] == 0) continue;
    std::vector<std::optional<double>> x(L);
    bool any = false;
    double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
    for (std::size_t l = 0; l < L; ++l) {
      const auto& raw = t.heuristics[l][m];
      if (!raw || !std::isfinite(*raw)) continue;
      x[l] = log1p[m] ? std::log1p(*raw) : *raw;
      lo = std::min(lo, *x[l]);
      hi = std::max(hi, *x[l]);
      any = true;
    }
    if (!any) continue;
    const double w = static_cast<double>(level[m]) / n;
    for (std::size_t l = 0; l < L; ++l) {
      const double v = x[l] ? *x[l] : (dir[m] > 0 ? lo : hi);
      const double unit = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      score[l] += w * (dir[m] * unit);
    }
  }
  return score;
}

inline std::size_t first_max(const std::vector<double>& v) {
  std::size_t b = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > v[b]) b = i;
  }
  return b;
}

/// Exhaustive enumeration in lexicographic order of the weight vector;
/// a strictly better mean is required to replace the incumbent.
inline Choice enumerate(const std::vector<EpisodeTable>& tables, int n, const std::array<bool, kHeuristicCount>& active,
                        const std::array<int, kHeuristicCount>& dir = {1, 1, 1, -1, -1, -1},
                        const std::array<bool, kHeuristicCount>& log1p = {true, false, false, false, false, false}) {
  Choice best;
  std::array<int, kHeuristicCount> level{};
  bool have = false;
  auto visit = [&]() {
    bool nonzero = false;
    for (int v : level) nonzero = nonzero || v != 0;
    if (!nonzero) return;
    double sum = 0.0;
    for (const auto& t : tables) sum += t.miou[first_max(layer_scores(t, level, n, dir, log1p))];
    const double mean = sum / static_cast<double>(tables.size());
    if (!have || mean > best.mean_miou) {
      best = {level, mean};
      have = true;
    }
  };
  // Odometer over the active positions, most significant first.
  std::vector<std::size_t> pos;
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    if (active[m]) pos.push_back(m);
  }
  while (true) {
    visit();
    std::size_t i = pos.size();
    while (i > 0) {
      --i;
      if (level[pos[i]] < n) {
        ++level[pos[i]];
        break;
      }
      level[pos[i]] = 0;
      if (i == 0) return best;
    }
    if (pos.empty()) return best;
  }
}

}  // namespace brute
