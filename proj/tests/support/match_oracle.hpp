#pragma once

// Exhaustive reference for greedy detection matching.

#include <functional>
#include <limits>
#include <algorithm>
#include <numeric>
#include <vector>

#include "lfusion/evalkit/metrics.hpp"

namespace lfusion::testing {

// Enumerates every injective partial assignment consistent with the
// criterion and keeps the lexicographically smallest sequence of per-
// detection costs (unmatched = +inf) in descending-score order.
inline std::vector<int> oracle_assignment(const std::vector<EvalBox>& dets, const std::vector<EvalBox>& gts,
                                          const MatchCriterion& c) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return dets[i].score > dets[j].score; });
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best_key;
  std::vector<int> best, cur(dets.size(), -1);
  std::vector<bool> used(gts.size(), false);
  std::vector<double> key;
  std::function<void(std::size_t)> rec = [&](std::size_t k) {
    if (k == order.size()) {
      if (best_key.empty() || key < best_key) {
        best_key = key;
        best = cur;
      }
      return;
    }
    const int d = order[k];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].category != dets[d].category) continue;
      auto cost = match_cost(dets[d], gts[g], c);
      if (!cost) continue;
      used[g] = true;
      cur[d] = static_cast<int>(g);
      key.push_back(*cost);
      rec(k + 1);
      key.pop_back();
      cur[d] = -1;
      used[g] = false;
    }
    key.push_back(inf);
    rec(k + 1);
    key.pop_back();
  };
  rec(0);
  return best;
}

}  // namespace lfusion::testing
