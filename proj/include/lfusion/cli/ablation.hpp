#pragma once

// Ablation sweeps: each axis is a fixed list of config deltas applied to a
// base config, trained over several seeds.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lfusion/cli/train.hpp"

namespace lfusion {

enum class AblationAxis { kFusionStages, kTaskWeights, kLossWeights, kRobustness };

inline std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::kFusionStages: return "fusion_stages";
    case AblationAxis::kTaskWeights: return "task_weights";
    case AblationAxis::kLossWeights: return "loss_weights";
    case AblationAxis::kRobustness: return "robustness";
  }
  return "?";
}

inline AblationAxis parse_axis(const std::string& s) {
  for (auto a : {AblationAxis::kFusionStages, AblationAxis::kTaskWeights, AblationAxis::kLossWeights,
                 AblationAxis::kRobustness})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown ablation axis '" + s +
                              "' (expected fusion_stages, task_weights, loss_weights or robustness)");
}

struct AblationRow {
  std::string label;
  RunConfig config;
};

inline std::vector<AblationRow> ablation_rows(const RunConfig& base, AblationAxis axis) {
  std::vector<AblationRow> rows;
  auto fmt = [](double v) { return detail::format_double(v); };
  switch (axis) {
    case AblationAxis::kFusionStages:
      for (const std::set<int>& s : {std::set<int>{4}, {3, 4}, {2, 3, 4}, {1, 2, 3, 4}}) {
        auto c = base;
        c.fusion_stages = s;
        std::string label;
        for (int st : s) label += (label.empty() ? "" : "+") + std::to_string(st);
        rows.push_back({label, c});
      }
      break;
    case AblationAxis::kTaskWeights:
      for (auto [wb, w2] : std::vector<std::pair<double, double>>{
               {0.2, 0.8}, {0.5, 0.5}, {0.8, 0.2}, {0.9, 0.1}, {0.95, 0.05}, {0.99, 0.01}, {1.0, 0.0}}) {
        auto c = base;
        c.loss.w_bev = wb;
        c.loss.w_2d = w2;
        rows.push_back({fmt(wb) + "/" + fmt(w2), c});
      }
      break;
    case AblationAxis::kLossWeights: {
      struct W {
        double fg, bg, heat, theta;
      };
      for (auto w : std::vector<W>{{0.8, 0.2, 10, 0.2},
                                   {0.9, 0.1, 2, 0.2},
                                   {0.9, 0.1, 10, 0.2},
                                   {0.9, 0.1, 10, 1.0},
                                   {0.9, 0.1, 20, 0.2},
                                   {0.9, 0.1, 50, 0.2},
                                   {0.95, 0.05, 10, 0.2}}) {
        auto c = base;
        c.loss.w_fg = w.fg;
        c.loss.w_bg = w.bg;
        c.loss.w_heat = w.heat;
        c.loss.w_theta = w.theta;
        rows.push_back({"fg" + fmt(w.fg) + "/bg" + fmt(w.bg) + "/heat" + fmt(w.heat) + "/theta" + fmt(w.theta), c});
      }
      break;
    }
    case AblationAxis::kRobustness: {
      struct R {
        double rot, trans;
        bool mirror;
      };
      for (auto r : std::vector<R>{{0, 0, false}, {0, 0, true}, {0, 0.5, true}, {15, 0.5, true}, {15, 5.5, true}}) {
        auto c = base;
        c.max_rot = r.rot;
        c.max_trans = r.trans;
        c.mirror = r.mirror;
        rows.push_back({"rot" + fmt(r.rot) + "/trans" + fmt(r.trans) + (r.mirror ? "/mirror" : "/nomirror"), c});
      }
      break;
    }
  }
  return rows;
}

struct AblationResult {
  std::string axis, row;
  std::uint64_t seed = 0;
  double bev_map = 0.0;
  double map_2d = 0.0;  // 0 when the row trains no 2D head
};

struct AblationSummary {
  std::string row;
  double bev_mean = 0, bev_std = 0, map2d_mean = 0, map2d_std = 0;
};

/// Mean and population standard deviation per row, in row order.
inline std::vector<AblationSummary> summarize_ablation(const std::vector<AblationResult>& results) {
  std::vector<AblationSummary> out;
  for (const auto& r : results) {
    if (std::none_of(out.begin(), out.end(), [&](const auto& s) { return s.row == r.row; })) out.push_back({r.row});
  }
  for (auto& s : out) {
    std::vector<double> b, m;
    for (const auto& r : results)
      if (r.row == s.row) {
        b.push_back(r.bev_map);
        m.push_back(r.map_2d);
      }
    auto stats = [](const std::vector<double>& x, double& mean, double& sd) {
      mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      double ss = 0;
      for (double v : x) ss += (v - mean) * (v - mean);
      sd = std::sqrt(ss / static_cast<double>(x.size()));
    };
    stats(b, s.bev_mean, s.bev_std);
    stats(m, s.map2d_mean, s.map2d_std);
  }
  return out;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationResult>& results) {
  os << "axis,row,seed,bev_map,map_2d\n";
  for (const auto& r : results)
    os << r.axis << ',' << r.row << ',' << r.seed << ',' << detail::format_double(r.bev_map) << ','
       << detail::format_double(r.map_2d) << '\n';
}

inline void write_ablation_summary_csv(std::ostream& os, const std::string& axis,
                                       const std::vector<AblationSummary>& rows) {
  os << "axis,row,bev_map_mean,bev_map_std,map_2d_mean,map_2d_std\n";
  for (const auto& r : rows)
    os << axis << ',' << r.row << ',' << detail::format_double(r.bev_mean) << ',' << detail::format_double(r.bev_std)
       << ',' << detail::format_double(r.map2d_mean) << ',' << detail::format_double(r.map2d_std) << '\n';
}

/// Trains every row of `axis` for seeds base.seed .. base.seed + seeds - 1.
/// Runs write under <out_dir>/<axis>/row<i>/seed<s>; the tables go to
/// <out_dir>/ablation_<axis>.csv and ablation_<axis>_summary.csv.
inline std::vector<AblationResult> run_ablation(const RunConfig& base, AblationAxis axis, std::size_t seeds,
                                                bool write_files = true) {
  namespace fs = std::filesystem;
  if (seeds == 0) throw std::invalid_argument("run_ablation: need at least one seed");
  std::vector<AblationResult> results;
  const auto rows = ablation_rows(base, axis);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t s = 0; s < seeds; ++s) {
      auto cfg = rows[i].config;
      cfg.seed = base.seed + s;
      cfg.out_dir = (fs::path(base.out_dir) / to_string(axis) / ("row" + std::to_string(i)) / ("seed" + std::to_string(cfg.seed))).string();
      TrainOptions opt;
      opt.write_files = write_files;
      const auto res = run_train(cfg, opt);
      results.push_back({to_string(axis), rows[i].label, cfg.seed, res.final_metrics.bev_map,
                         res.final_metrics.map_2d.value_or(0.0)});
    }
  if (write_files) {
    fs::create_directories(base.out_dir);
    std::ofstream csv(fs::path(base.out_dir) / ("ablation_" + to_string(axis) + ".csv"));
    write_ablation_csv(csv, results);
    std::ofstream sum(fs::path(base.out_dir) / ("ablation_" + to_string(axis) + "_summary.csv"));
    write_ablation_summary_csv(sum, to_string(axis), summarize_ablation(results));
  }
  return results;
}

}  // namespace lfusion
