#pragma once

// How much attention a query token pays to the tokens of the other view
// that see the same part of the world, relative to uniform attention.

#include <set>
#include <vector>

#include "lfusion/fusenet/fusion.hpp"
#include "lfusion/scenesynth/correspondence.hpp"

namespace lfusion {

struct FocusScore {
  ViewTag view = ViewTag::kBev;  // view of the query token
  std::size_t token = 0;         // local index within its view
  double mass = 0.0;             // attention inside the correspondence region
  double baseline = 0.0;         // |region| / T
  double ratio = 0.0;
  std::size_t region_size = 0;
};

/// Head- and layer-averaged T x T attention of batch item b over the
/// records of one stage.
template <class T>
std::vector<double> mean_attention(const std::vector<AttentionRecord<T>>& records, int stage, std::size_t b) {
  std::vector<double> acc;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.stage != stage) continue;
    const auto m = r.matrix(b);
    if (acc.empty()) acc.assign(m.size(), 0.0);
    if (acc.size() != m.size()) throw std::invalid_argument("mean_attention: records of one stage differ in size");
    for (std::size_t i = 0; i < m.size(); ++i) acc[i] += static_cast<double>(m[i]);
    ++n;
  }
  if (!n) throw std::invalid_argument("mean_attention: no records for stage " + std::to_string(stage));
  for (auto& v : acc) v /= static_cast<double>(n);
  return acc;
}

template <class T>
int final_stage(const std::vector<AttentionRecord<T>>& records) {
  int s = 0;
  for (const auto& r : records) s = std::max(s, r.stage);
  return s;
}

/// Attention mass of a query row restricted to a set of global token indices.
inline double row_mass(const std::vector<double>& attn, std::size_t tokens, std::size_t query,
                       const std::vector<std::size_t>& cols) {
  double m = 0.0;
  for (auto c : cols) m += attn[query * tokens + c];
  return m;
}

/// Object-centre query tokens of the pair (both views), deduplicated.
inline std::vector<std::pair<ViewTag, std::size_t>> object_query_tokens(const SensorPair& pair,
                                                                        const CorrespondenceOracle& oracle,
                                                                        const SensorGeometry& g) {
  std::set<std::size_t> bev, cam;
  const auto raster = g.bev_raster();
  for (const auto& b : pair.bev_boxes) {
    const auto cell = raster.locate(b.x, b.y);
    if (raster.contains(cell)) bev.insert(oracle.bev_layout().token_at(cell.row + 0.5, cell.col + 0.5));
  }
  for (const auto& b : pair.image_boxes) cam.insert(oracle.camera_layout().token_at(b.cv(), b.cu()));
  std::vector<std::pair<ViewTag, std::size_t>> out;
  for (auto t : bev) out.emplace_back(ViewTag::kBev, t);
  for (auto t : cam) out.emplace_back(ViewTag::kCamera, t);
  return out;
}

/// Focus of each object-centre token at the final fusion stage for batch
/// item b. Queries whose region is empty (outside the other view) are skipped.
template <class T>
std::vector<FocusScore> attention_focus(const std::vector<AttentionRecord<T>>& records, std::size_t b,
                                        const SensorPair& pair, const HiddenProjection& projection,
                                        const SensorGeometry& g) {
  std::vector<FocusScore> out;
  if (records.empty() || (pair.bev_boxes.empty() && pair.image_boxes.empty())) return out;
  const int stage = final_stage(records);
  const AttentionRecord<T>* rec = nullptr;
  for (const auto& r : records)
    if (r.stage == stage) rec = &r;
  std::size_t bev_view = 0, cam_view = 1;
  if (rec->tags.size() != 2) throw std::invalid_argument("attention_focus: expected two views");
  if (rec->tags[0] == ViewTag::kCamera) std::swap(bev_view, cam_view);
  CorrespondenceOracle oracle(projection, g, rec->grids[bev_view], rec->grids[cam_view]);
  const auto attn = mean_attention(records, stage, b);
  const std::size_t Tn = rec->tokens();
  for (const auto& [view, local] : object_query_tokens(pair, oracle, g)) {
    const auto& self = rec->partition[view == ViewTag::kBev ? bev_view : cam_view];
    const auto& other = rec->partition[view == ViewTag::kBev ? cam_view : bev_view];
    const auto region = oracle.token_region(view, local);
    if (region.empty()) continue;
    std::vector<std::size_t> cols;
    for (auto t : region) cols.push_back(other.begin + t);
    FocusScore f;
    f.view = view;
    f.token = local;
    f.region_size = region.size();
    f.mass = row_mass(attn, Tn, self.begin + local, cols);
    f.baseline = static_cast<double>(region.size()) / static_cast<double>(Tn);
    f.ratio = f.mass / f.baseline;
    out.push_back(f);
  }
  return out;
}

}  // namespace lfusion
