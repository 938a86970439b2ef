#pragma once

#include <cmath>
#include <cstddef>

namespace lfusion {

enum class HeadKind { kBev, k2d };

inline const char* to_string(HeadKind k) { return k == HeadKind::kBev ? "bev" : "2d"; }

/// Affine map between a head's output grid and the frame detections live in.
/// Column c, sub-cell offset dx maps to a = a0 + (c + dx) * step_a, and row r,
/// offset dy maps to b = b0 + (r + dy) * step_b.
///
/// BEV: a is forward x (m), b is lateral y (m), rows run from +y down to -y.
/// 2D:  a is image u (px), b is image v (px).
struct GridGeometry {
  std::size_t rows = 0, cols = 0;
  double a0 = 0, step_a = 1;
  double b0 = 0, step_b = 1;

  struct Cell {
    long row, col;
    double dy, dx;
  };

  double a_at(double col) const { return a0 + col * step_a; }
  double b_at(double row) const { return b0 + row * step_b; }

  Cell locate(double a, double b) const {
    const double fc = (a - a0) / step_a, fr = (b - b0) / step_b;
    const double c = std::floor(fc), r = std::floor(fr);
    return {static_cast<long>(r), static_cast<long>(c), fr - r, fc - c};
  }

  bool contains(const Cell& c) const {
    return c.row >= 0 && c.col >= 0 && c.row < static_cast<long>(rows) && c.col < static_cast<long>(cols);
  }

  /// Geometric-mean cell edge in frame units.
  double cell_size() const { return std::sqrt(std::abs(step_a * step_b)); }
};

/// BEV grid covering x in [0, cols*cell) along columns and y from
/// +rows*cell/2 (row 0) down to -rows*cell/2.
inline GridGeometry bev_grid(std::size_t rows, std::size_t cols, double cell) {
  return {rows, cols, 0.0, cell, 0.5 * static_cast<double>(rows) * cell, -cell};
}

/// Image grid with square cells of `cell` pixels.
inline GridGeometry image_grid(std::size_t rows, std::size_t cols, double cell) {
  return {rows, cols, 0.0, cell, 0.0, cell};
}

}  // namespace lfusion
