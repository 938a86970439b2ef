#pragma once

// Accumulates per-frame detections and ground truth into BEV/2D mAP and
// mean yaw error, and writes them as JSON lines.

#include <array>
#include <optional>
#include <ostream>
#include <string>

#include "json.hpp"
#include "lfusion/evalkit/metrics.hpp"
#include "lfusion/heads/yaw.hpp"

namespace lfusion {

inline constexpr std::array<double, 4> kBevDistanceThresholds{0.5, 1.0, 2.0, 4.0};
inline constexpr double kImageIouThreshold = 0.5;
/// Yaw error is measured over true positives at this distance threshold.
inline constexpr double kYawMatchDistance = 2.0;

struct MetricsSummary {
  std::vector<std::array<double, 4>> bev_ap;  // [category][threshold]
  std::vector<double> ap_2d;                  // [category], empty when no 2D head
  double bev_map = 0.0;
  std::optional<double> map_2d;
  std::optional<double> mean_yaw_err;  // radians
  std::optional<double> focus_ratio_mean;
};

class DetectionEvaluator {
 public:
  DetectionEvaluator(std::size_t categories, bool with_2d)
      : categories_(categories), with_2d_(with_2d), bev_(categories), img_(categories) {}

  void add_bev_frame(const std::vector<EvalBox>& dets, const std::vector<EvalBox>& gts) {
    for (std::size_t c = 0; c < categories_; ++c) {
      const auto d = of_category(dets, c), g = of_category(gts, c);
      for (std::size_t t = 0; t < kBevDistanceThresholds.size(); ++t) {
        const auto m = match_detections(d, g, MatchCriterion::distance(kBevDistanceThresholds[t]));
        bev_[c][t].add(d, m);
        if (kBevDistanceThresholds[t] == kYawMatchDistance)
          for (std::size_t i = 0; i < d.size(); ++i)
            if (m.tp[i] && d[i].yaw && g[m.matched_gt[i]].yaw) {
              yaw_err_sum_ += angle_distance(*d[i].yaw, *g[m.matched_gt[i]].yaw);
              ++yaw_count_;
            }
      }
    }
  }

  void add_image_frame(const std::vector<EvalBox>& dets, const std::vector<EvalBox>& gts) {
    for (std::size_t c = 0; c < categories_; ++c) {
      const auto d = of_category(dets, c), g = of_category(gts, c);
      img_[c].add(d, match_detections(d, g, MatchCriterion::iou(kImageIouThreshold)));
    }
  }

  MetricsSummary summary() const {
    MetricsSummary s;
    std::vector<std::vector<double>> table;
    for (std::size_t c = 0; c < categories_; ++c) {
      std::array<double, 4> row{};
      for (std::size_t t = 0; t < row.size(); ++t) row[t] = average_precision(bev_[c][t]);
      s.bev_ap.push_back(row);
      table.emplace_back(row.begin(), row.end());
    }
    s.bev_map = map_score(table);
    if (with_2d_) {
      std::vector<std::vector<double>> t2;
      for (std::size_t c = 0; c < categories_; ++c) {
        s.ap_2d.push_back(average_precision(img_[c]));
        t2.push_back({s.ap_2d.back()});
      }
      s.map_2d = map_score(t2);
    }
    if (yaw_count_) s.mean_yaw_err = yaw_err_sum_ / static_cast<double>(yaw_count_);
    return s;
  }

 private:
  static std::vector<EvalBox> of_category(const std::vector<EvalBox>& xs, std::size_t c) {
    std::vector<EvalBox> out;
    for (const auto& x : xs)
      if (x.category == static_cast<int>(c)) out.push_back(x);
    return out;
  }

  std::size_t categories_;
  bool with_2d_;
  std::vector<std::array<PrecisionRecallAccumulator, 4>> bev_;
  std::vector<PrecisionRecallAccumulator> img_;
  double yaw_err_sum_ = 0.0;
  std::size_t yaw_count_ = 0;
};

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

/// One line per (category, threshold) AP, then one summary line.
inline void write_metrics_jsonl(std::ostream& os, const MetricsSummary& s, const std::string& split,
                                const std::vector<std::string>& category_names, const nlohmann::json& extra = {}) {
  for (std::size_t c = 0; c < s.bev_ap.size(); ++c)
    for (std::size_t t = 0; t < kBevDistanceThresholds.size(); ++t)
      os << nlohmann::json{{"split", split}, {"head", "bev"}, {"category", category_names.at(c)},
                           {"threshold", kBevDistanceThresholds[t]}, {"ap", s.bev_ap[c][t]}}
                .dump()
         << '\n';
  for (std::size_t c = 0; c < s.ap_2d.size(); ++c)
    os << nlohmann::json{{"split", split}, {"head", "2d"}, {"category", category_names.at(c)},
                         {"threshold", kImageIouThreshold}, {"ap", s.ap_2d[c]}}
              .dump()
       << '\n';
  nlohmann::json summary{{"split", split},
                         {"bev_map", s.bev_map},
                         {"map_2d", optional_json(s.map_2d)},
                         {"mean_yaw_err", optional_json(s.mean_yaw_err)},
                         {"focus_ratio_mean", optional_json(s.focus_ratio_mean)}};
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
  os << summary.dump() << '\n';
}

}  // namespace lfusion
