#pragma once

// Evaluator-side ground truth for which fusion tokens of one view see the
// same part of the world as a query location in the other view. Uses the
// hidden projection; nothing here is reachable from the model.

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lfusion/fusenet/fusion.hpp"
#include "lfusion/scenesynth/render.hpp"

namespace lfusion {

/// Minimum camera-frame depth for a point to be in front of the camera.
inline constexpr double kMinCameraDepth = 0.5;

struct ColumnSpan {
  double u0 = 0.0, u1 = 0.0;
};

/// Image-column range covered by the BEV rectangle [x0,x1] x [y0,y1], or
/// nothing when the rectangle lies entirely behind the camera.
inline std::optional<ColumnSpan> project_rect(const HiddenProjection& p, double x0, double x1, double y0, double y1) {
  std::vector<std::array<double, 2>> poly;
  for (auto [x, y] : {std::pair{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}) poly.push_back(p.to_camera(x, y));
  // Clip against x' >= kMinCameraDepth.
  std::vector<std::array<double, 2>> clipped;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    const bool ia = a[0] >= kMinCameraDepth, ib = b[0] >= kMinCameraDepth;
    if (ia) clipped.push_back(a);
    if (ia != ib) {
      const double t = (kMinCameraDepth - a[0]) / (b[0] - a[0]);
      clipped.push_back({kMinCameraDepth, a[1] + t * (b[1] - a[1])});
    }
  }
  if (clipped.empty()) return std::nullopt;
  ColumnSpan s{1e300, -1e300};
  for (const auto& q : clipped) {
    const double u = p.column(q[0], q[1]);
    s.u0 = std::min(s.u0, u);
    s.u1 = std::max(s.u1, u);
  }
  return s;
}

/// Fusion token layout of one view over its input raster.
struct TokenLayout {
  TokenGrid grid;
  std::size_t raster_rows = 0, raster_cols = 0;

  double rows_per_token() const { return static_cast<double>(raster_rows) / static_cast<double>(grid.rows); }
  double cols_per_token() const { return static_cast<double>(raster_cols) / static_cast<double>(grid.cols); }
  std::size_t token_at(double row, double col) const {
    const auto r = std::min(grid.rows - 1, static_cast<std::size_t>(row / rows_per_token()));
    const auto c = std::min(grid.cols - 1, static_cast<std::size_t>(col / cols_per_token()));
    return r * grid.cols + c;
  }
};

struct CorrespondenceQuery {
  ViewTag view = ViewTag::kBev;
  double row = 0.0, col = 0.0;  // raster coordinates of the query (cell or pixel units)
};

class CorrespondenceOracle {
 public:
  CorrespondenceOracle(const HiddenProjection& p, const SensorGeometry& g, TokenGrid bev_tokens,
                       TokenGrid camera_tokens)
      : p_(p), g_(g), bev_{bev_tokens, g.bev_rows, g.bev_cols}, cam_{camera_tokens, g.image_rows, g.image_cols} {}

  const TokenLayout& bev_layout() const { return bev_; }
  const TokenLayout& camera_layout() const { return cam_; }

  /// Tokens of the other view matching the query's enclosing cell (BEV) or
  /// pixel column (camera). Sorted, local to the other view's token grid.
  std::vector<std::size_t> region(const CorrespondenceQuery& q) const {
    if (q.view == ViewTag::kBev) {
      check(q, g_.bev_rows, g_.bev_cols);
      const auto raster = g_.bev_raster();
      const double r = std::floor(q.row), c = std::floor(q.col);
      return camera_tokens_for(project_bev_box(raster.a_at(c), raster.a_at(c + 1), raster.b_at(r + 1), raster.b_at(r)));
    }
    check(q, g_.image_rows, g_.image_cols);
    const double c = std::floor(q.col);
    return bev_tokens_for(c, c + 1.0);
  }

  /// Region for a whole fusion token of the query view.
  std::vector<std::size_t> token_region(ViewTag view, std::size_t token) const {
    if (view == ViewTag::kBev) {
      const auto raster = g_.bev_raster();
      const double r0 = static_cast<double>(token / bev_.grid.cols) * bev_.rows_per_token();
      const double c0 = static_cast<double>(token % bev_.grid.cols) * bev_.cols_per_token();
      return camera_tokens_for(project_bev_box(raster.a_at(c0), raster.a_at(c0 + bev_.cols_per_token()),
                                               raster.b_at(r0 + bev_.rows_per_token()), raster.b_at(r0)));
    }
    const double c0 = static_cast<double>(token % cam_.grid.cols) * cam_.cols_per_token();
    return bev_tokens_for(c0, c0 + cam_.cols_per_token());
  }

 private:
  static void check(const CorrespondenceQuery& q, std::size_t rows, std::size_t cols) {
    if (!(q.row >= 0.0 && q.col >= 0.0 && q.row < static_cast<double>(rows) && q.col < static_cast<double>(cols)))
      throw std::out_of_range("correspondence_region: query (" + std::to_string(q.row) + ", " +
                              std::to_string(q.col) + ") outside " + std::to_string(rows) + "x" +
                              std::to_string(cols) + " view");
  }

  std::optional<ColumnSpan> project_bev_box(double x0, double x1, double y0, double y1) const {
    return project_rect(p_, std::min(x0, x1), std::max(x0, x1), std::min(y0, y1), std::max(y0, y1));
  }

  std::vector<std::size_t> camera_tokens_for(const std::optional<ColumnSpan>& span) const {
    std::vector<std::size_t> out;
    if (!span) return out;
    const double W = static_cast<double>(g_.image_cols);
    const double u0 = std::max(0.0, span->u0), u1 = std::min(W, span->u1);
    if (u1 <= u0) return out;
    for (std::size_t tc = 0; tc < cam_.grid.cols; ++tc) {
      const double a = static_cast<double>(tc) * cam_.cols_per_token(), b = a + cam_.cols_per_token();
      if (b <= u0 || a >= u1) continue;
      for (std::size_t tr = 0; tr < cam_.grid.rows; ++tr) out.push_back(tr * cam_.grid.cols + tc);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<std::size_t> bev_tokens_for(double u0, double u1) const {
    std::vector<std::size_t> out;
    const auto raster = g_.bev_raster();
    for (std::size_t tr = 0; tr < bev_.grid.rows; ++tr)
      for (std::size_t tc = 0; tc < bev_.grid.cols; ++tc) {
        const double r0 = static_cast<double>(tr) * bev_.rows_per_token();
        const double c0 = static_cast<double>(tc) * bev_.cols_per_token();
        auto span = project_bev_box(raster.a_at(c0), raster.a_at(c0 + bev_.cols_per_token()),
                                    raster.b_at(r0 + bev_.rows_per_token()), raster.b_at(r0));
        if (span && span->u1 > u0 && span->u0 < u1) out.push_back(tr * bev_.grid.cols + tc);
      }
    return out;
  }

  HiddenProjection p_;
  SensorGeometry g_;
  TokenLayout bev_, cam_;
};

}  // namespace lfusion
