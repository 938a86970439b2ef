#pragma once

// Detection matching and average precision.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace lfusion {

/// A box in either frame: BEV centre (m) + l, w + yaw, or image centre (px) + w, h.
struct EvalBox {
  int category = 0;
  double a = 0.0, b = 0.0;
  double size0 = 0.0, size1 = 0.0;
  std::optional<double> yaw;
  double score = 1.0;  // detections only
};

struct MatchCriterion {
  enum class Kind { kCenterDistance, kIoU };
  Kind kind = Kind::kCenterDistance;
  double threshold = 2.0;

  static MatchCriterion distance(double d) { return {Kind::kCenterDistance, d}; }
  static MatchCriterion iou(double t) { return {Kind::kIoU, t}; }
};

/// Axis-aligned IoU of two centre/size boxes.
inline double box_iou(const EvalBox& x, const EvalBox& y) {
  const double ix = std::max(0.0, std::min(x.a + x.size0 / 2, y.a + y.size0 / 2) - std::max(x.a - x.size0 / 2, y.a - y.size0 / 2));
  const double iy = std::max(0.0, std::min(x.b + x.size1 / 2, y.b + y.size1 / 2) - std::max(x.b - x.size1 / 2, y.b - y.size1 / 2));
  const double inter = ix * iy;
  const double uni = x.size0 * x.size1 + y.size0 * y.size1 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Match cost of a pair, or nullopt when the criterion rejects it. Lower is better.
inline std::optional<double> match_cost(const EvalBox& det, const EvalBox& gt, const MatchCriterion& c) {
  if (c.kind == MatchCriterion::Kind::kCenterDistance) {
    const double d = std::hypot(det.a - gt.a, det.b - gt.b);
    if (d <= c.threshold) return d;
    return std::nullopt;
  }
  const double iou = box_iou(det, gt);
  if (iou >= c.threshold) return -iou;
  return std::nullopt;
}

struct MatchResult {
  std::vector<int> order;        // detection indices, descending score
  std::vector<bool> tp;          // per detection (input order)
  std::vector<int> matched_gt;   // per detection, -1 for false positives
  std::size_t num_tp = 0, num_fp = 0, num_gt = 0;
};

/// Greedy matching of one frame and category: detections in descending
/// score (stable), each claiming the best-cost unclaimed ground truth that
/// satisfies the criterion.
inline MatchResult match_detections(const std::vector<EvalBox>& dets, const std::vector<EvalBox>& gts,
                                    const MatchCriterion& criterion) {
  MatchResult r;
  r.num_gt = gts.size();
  r.order.resize(dets.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](int i, int j) { return dets[i].score > dets[j].score; });
  r.tp.assign(dets.size(), false);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<bool> claimed(gts.size(), false);
  for (int di : r.order) {
    int best = -1;
    double best_cost = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].category != dets[di].category) continue;
      const auto cost = match_cost(dets[di], gts[g], criterion);
      if (cost && (best < 0 || *cost < best_cost)) {
        best = static_cast<int>(g);
        best_cost = *cost;
      }
    }
    if (best >= 0) {
      claimed[best] = true;
      r.tp[di] = true;
      r.matched_gt[di] = best;
      ++r.num_tp;
    } else {
      ++r.num_fp;
    }
  }
  return r;
}

/// Score-ranked outcomes pooled over frames for one category/threshold.
struct PrecisionRecallAccumulator {
  std::vector<std::pair<double, bool>> scored;  // (score, is_tp)
  std::size_t num_gt = 0;

  void add(const std::vector<EvalBox>& dets, const MatchResult& m) {
    for (std::size_t i = 0; i < dets.size(); ++i) scored.emplace_back(dets[i].score, m.tp[i]);
    num_gt += m.num_gt;
  }
};

inline constexpr int kRecallPoints = 40;

/// Mean interpolated precision at recall 1/40, 2/40, ..., 1. Interpolated
/// precision at r is the best precision at any recall >= r (0 if none).
inline double average_precision(std::vector<std::pair<double, bool>> scored, std::size_t num_gt) {
  if (num_gt == 0 || scored.empty()) return 0.0;
  std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& [s, is_tp] : scored) {
    (is_tp ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  // Suffix maximum of precision.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  std::size_t k = 0;
  for (int j = 1; j <= kRecallPoints; ++j) {
    const double r = static_cast<double>(j) / kRecallPoints;
    while (k < recall.size() && recall[k] < r - 1e-12) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return sum / kRecallPoints;
}

inline double average_precision(const PrecisionRecallAccumulator& acc) {
  return average_precision(acc.scored, acc.num_gt);
}

/// Mean over categories of the mean over thresholds, scaled to [0, 100].
/// aps[category][threshold index].
inline double map_score(const std::vector<std::vector<double>>& aps) {
  if (aps.empty()) throw std::invalid_argument("map_score: no categories");
  double total = 0.0;
  for (const auto& row : aps) {
    if (row.empty()) throw std::invalid_argument("map_score: category without thresholds");
    total += std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  }
  return 100.0 * total / static_cast<double>(aps.size());
}

}  // namespace lfusion
