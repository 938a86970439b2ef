#pragma once

// Per-cell training targets for one head, built from annotated objects.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfusion/diffcore/tensor.hpp"
#include "lfusion/heads/geometry.hpp"
#include "lfusion/heads/yaw.hpp"

namespace lfusion {

/// An annotation expressed in a head's frame (see GridGeometry).
struct GridObject {
  int category = 0;
  double a = 0.0, b = 0.0;
  double size0 = 0.0, size1 = 0.0;
  std::optional<double> yaw;
};

struct GridTargets {
  std::size_t rows = 0, cols = 0, classes = 0;
  std::vector<float> heatmap;     // rows*cols*classes
  std::vector<float> box;         // rows*cols*4
  std::vector<int> yaw_class;     // rows*cols, -1 where unused
  std::vector<float> yaw_offset;  // rows*cols
  std::vector<bool> fg_mask;      // rows*cols*classes, heatmap > 0
  std::vector<bool> center_mask;  // rows*cols
  std::size_t dropped = 0;        // objects whose centre fell outside the grid
  std::size_t collisions = 0;     // objects sharing a centre cell with an earlier one

  std::size_t center_count() const {
    std::size_t n = 0;
    for (bool m : center_mask) n += m;
    return n;
  }
};

/// Splat width for an object spanning `diag_cells` cells corner to corner.
inline double splat_sigma(double diag_cells) { return std::max(1.0, diag_cells / 6.0); }

/// Objects are written in order; when two centres share a cell the earlier
/// object's regression targets are kept (callers order nearest first).
inline GridTargets build_targets(const std::vector<GridObject>& objects, const GridGeometry& geom,
                                 std::size_t classes, HeadKind kind) {
  GridTargets t;
  t.rows = geom.rows;
  t.cols = geom.cols;
  t.classes = classes;
  const std::size_t cells = geom.rows * geom.cols;
  t.heatmap.assign(cells * classes, 0.0f);
  t.box.assign(cells * 4, 0.0f);
  t.yaw_class.assign(cells, -1);
  t.yaw_offset.assign(cells, 0.0f);
  t.fg_mask.assign(cells * classes, false);
  t.center_mask.assign(cells, false);

  for (const auto& o : objects) {
    if (!(o.size0 > 0.0 && o.size1 > 0.0))
      throw std::invalid_argument("build_targets: object size must be positive, got " + std::to_string(o.size0) +
                                  " x " + std::to_string(o.size1));
    if (o.category < 0 || static_cast<std::size_t>(o.category) >= classes)
      throw std::invalid_argument("build_targets: category " + std::to_string(o.category) + " out of range");
    const auto cell = geom.locate(o.a, o.b);
    if (!geom.contains(cell)) {
      ++t.dropped;
      continue;
    }
    const double diag = std::hypot(o.size0, o.size1) / geom.cell_size();
    const double sigma = splat_sigma(diag);
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    for (long dr = -radius; dr <= radius; ++dr)
      for (long dc = -radius; dc <= radius; ++dc) {
        const long r = cell.row + dr, c = cell.col + dc;
        if (r < 0 || c < 0 || r >= static_cast<long>(geom.rows) || c >= static_cast<long>(geom.cols)) continue;
        const double d2 = static_cast<double>(dr * dr + dc * dc);
        const float v = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
        auto& h = t.heatmap[(static_cast<std::size_t>(r) * geom.cols + c) * classes + o.category];
        h = std::max(h, v);
      }
    const std::size_t ci = static_cast<std::size_t>(cell.row) * geom.cols + cell.col;
    if (t.center_mask[ci]) {
      ++t.collisions;
      continue;
    }
    t.center_mask[ci] = true;
    t.box[ci * 4 + 0] = static_cast<float>(cell.dx);
    t.box[ci * 4 + 1] = static_cast<float>(cell.dy);
    t.box[ci * 4 + 2] = static_cast<float>(std::log(o.size0));
    t.box[ci * 4 + 3] = static_cast<float>(std::log(o.size1));
    if (kind == HeadKind::kBev) {
      if (!o.yaw) throw std::invalid_argument("build_targets: BEV object without yaw");
      const auto code = encode_yaw(*o.yaw);
      t.yaw_class[ci] = code.bin;
      t.yaw_offset[ci] = static_cast<float>(code.offset);
    }
  }
  for (std::size_t i = 0; i < t.heatmap.size(); ++i) t.fg_mask[i] = t.heatmap[i] > 0.0f;
  return t;
}

/// Batched tensor view of GridTargets in the layout the losses consume.
template <class T = float>
struct TargetBatch {
  BasicTensor<T> heatmap;      // [B,H,W,K]
  BasicTensor<T> fg_mask;      // [B,H,W,K], 0/1
  BasicTensor<T> box;          // [B,H,W,4]
  BasicTensor<T> center_mask;  // [B,H,W], 0/1
  BasicTensor<T> yaw_class;    // [B,H,W,8] one-hot at centre cells (BEV only)
  BasicTensor<T> yaw_offset;   // [B,H,W,1] (BEV only)
};

template <class T = float>
TargetBatch<T> stack_targets(const std::vector<GridTargets>& items, HeadKind kind) {
  if (items.empty()) throw std::invalid_argument("stack_targets: empty batch");
  const std::size_t B = items.size(), H = items[0].rows, W = items[0].cols, K = items[0].classes;
  const std::size_t cells = H * W;
  std::vector<T> heat(B * cells * K), fg(B * cells * K), box(B * cells * 4), center(B * cells);
  std::vector<T> yc, yo;
  if (kind == HeadKind::kBev) {
    yc.assign(B * cells * kYawBins, T(0));
    yo.assign(B * cells, T(0));
  }
  for (std::size_t b = 0; b < B; ++b) {
    const auto& t = items[b];
    if (t.rows != H || t.cols != W || t.classes != K) throw std::invalid_argument("stack_targets: mixed grid sizes");
    for (std::size_t i = 0; i < cells * K; ++i) {
      heat[b * cells * K + i] = static_cast<T>(t.heatmap[i]);
      fg[b * cells * K + i] = t.fg_mask[i] ? T(1) : T(0);
    }
    for (std::size_t i = 0; i < cells * 4; ++i) box[b * cells * 4 + i] = static_cast<T>(t.box[i]);
    for (std::size_t i = 0; i < cells; ++i) {
      center[b * cells + i] = t.center_mask[i] ? T(1) : T(0);
      if (kind == HeadKind::kBev && t.center_mask[i]) {
        yc[(b * cells + i) * kYawBins + t.yaw_class[i]] = T(1);
        yo[b * cells + i] = static_cast<T>(t.yaw_offset[i]);
      }
    }
  }
  TargetBatch<T> out;
  out.heatmap = BasicTensor<T>::from({B, H, W, K}, std::move(heat));
  out.fg_mask = BasicTensor<T>::from({B, H, W, K}, std::move(fg));
  out.box = BasicTensor<T>::from({B, H, W, 4}, std::move(box));
  out.center_mask = BasicTensor<T>::from({B, H, W}, std::move(center));
  if (kind == HeadKind::kBev) {
    out.yaw_class = BasicTensor<T>::from({B, H, W, static_cast<std::size_t>(kYawBins)}, std::move(yc));
    out.yaw_offset = BasicTensor<T>::from({B, H, W, 1}, std::move(yo));
  }
  return out;
}

}  // namespace lfusion
