#pragma once

// Attention cost report: the per-channel entry count H^2 W^2 C of each
// configured fusion feature map, at the configured resolution and at
// doubled H and W, next to the standard per-head T^2 entry count.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lfusion/cli/run_config.hpp"
#include "lfusion/fusenet/fusion.hpp"

namespace lfusion {

struct CostRow {
  int stage = 0;
  std::string view;
  std::size_t scale = 1;  // input resolution multiplier
  std::size_t h = 0, w = 0, c = 0;
  std::uint64_t cost = 0;         // attention_cost(h, w, c)
  std::uint64_t token_entries = 0;  // heads * layers * T^2 of the whole fusion block
};

inline std::vector<CostRow> cost_report(const RunConfig& cfg, const std::vector<std::size_t>& scales = {1, 2}) {
  std::vector<CostRow> rows;
  for (std::size_t s : scales)
    for (int stage : cfg.fusion_stages) {
      const std::size_t div = std::size_t{2} << (stage - 1);
      const std::size_t c = cfg.stage_channels[stage - 1];
      const std::size_t bh = s * cfg.bev_rows / div, bw = s * cfg.bev_cols / div;
      const std::size_t ch = s * cfg.image_rows / div, cw = s * cfg.image_cols / div;
      const auto tb = clamped_token_grid(bh, bw, cfg.pool_size), tc = clamped_token_grid(ch, cw, cfg.pool_size);
      const std::uint64_t T = tb.count() + tc.count();
      const std::uint64_t entries = T * T * cfg.num_heads * cfg.num_layers;
      rows.push_back({stage, "bev", s, bh, bw, c, attention_cost(bh, bw, c), entries});
      rows.push_back({stage, "camera", s, ch, cw, c, attention_cost(ch, cw, c), entries});
    }
  return rows;
}

inline void print_cost_report(std::ostream& os, const std::vector<CostRow>& rows) {
  os << "stage,view,scale,h,w,c,attention_cost,token_entries\n";
  for (const auto& r : rows)
    os << r.stage << ',' << r.view << ',' << r.scale << ',' << r.h << ',' << r.w << ',' << r.c << ',' << r.cost << ','
       << r.token_entries << '\n';
}

}  // namespace lfusion
