#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "lfusion/heads/yaw.hpp"
#include "lfusion/scenesynth/render.hpp"

namespace lfusion {

/// Horizontal mirror of both views: camera columns reversed, BEV rows
/// (lateral axis) reversed, y -> -y and yaw -> -yaw. An involution.
inline SensorPair augment_mirror(const SensorPair& in, const SensorGeometry& g = {}) {
  SensorPair out = in;
  const std::size_t R = g.bev_rows, C = g.bev_cols, IR = g.image_rows, IC = g.image_cols;
  {
    auto src = in.bev.data();
    auto dst = out.bev.detach();
    auto d = dst.data();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < 2; ++k) d[(r * C + c) * 2 + k] = src[((R - 1 - r) * C + c) * 2 + k];
    out.bev = dst;
  }
  {
    auto src = in.camera.data();
    auto dst = in.camera.detach();
    auto d = dst.data();
    for (std::size_t r = 0; r < IR; ++r)
      for (std::size_t c = 0; c < IC; ++c)
        for (std::size_t k = 0; k < 3; ++k) d[(r * IC + c) * 3 + k] = src[(r * IC + (IC - 1 - c)) * 3 + k];
    out.camera = dst;
  }
  for (auto& b : out.bev_boxes) {
    b.y = -b.y;
    b.yaw = wrap_two_pi(-b.yaw);
  }
  const double W = static_cast<double>(IC);
  for (auto& b : out.image_boxes) {
    const double u0 = W - b.u1, u1 = W - b.u0;
    b.u0 = u0;
    b.u1 = u1;
  }
  return out;
}

struct RigidTransform {
  double rotation = 0.0;  // radians
  double tx = 0.0, ty = 0.0;
};

inline RigidTransform sample_rigid(double max_rot_deg, double max_trans, std::uint64_t seed) {
  if (!(max_rot_deg >= 0.0 && max_rot_deg <= 180.0))
    throw std::invalid_argument("augment_rigid: max_rot must lie in [0, 180] degrees");
  if (!(max_trans >= 0.0)) throw std::invalid_argument("augment_rigid: max_trans must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RigidTransform t;
  t.rotation = (2.0 * u(rng) - 1.0) * max_rot_deg * std::numbers::pi / 180.0;
  const double dir = 2.0 * std::numbers::pi * u(rng);
  const double mag = max_trans * u(rng);
  t.tx = mag * std::cos(dir);
  t.ty = mag * std::sin(dir);
  return t;
}

/// Moves the BEV raster by p -> R p + t about the ego origin (bilinear
/// resampling, zero fill) and its boxes with it. The camera and its boxes are
/// untouched, which is what a mis-mounted lidar looks like.
inline SensorPair apply_rigid(const SensorPair& in, const RigidTransform& t, const SensorGeometry& g = {}) {
  SensorPair out = in;
  const auto raster = g.bev_raster();
  const std::size_t R = g.bev_rows, C = g.bev_cols;
  const double c = std::cos(t.rotation), s = std::sin(t.rotation);
  auto src = in.bev.data();
  std::vector<float> dst(R * C * 2, 0.0f);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t col = 0; col < C; ++col) {
      const double qx = raster.a_at(col + 0.5) - t.tx, qy = raster.b_at(r + 0.5) - t.ty;
      const double px = c * qx + s * qy, py = -s * qx + c * qy;  // R^T (q - t)
      // Continuous source position in cell-centre coordinates.
      const double fc = (px - raster.a0) / raster.step_a - 0.5, fr = (py - raster.b0) / raster.step_b - 0.5;
      const double c0 = std::floor(fc), r0 = std::floor(fr);
      const double wc = fc - c0, wr = fr - r0;
      for (int k = 0; k < 2; ++k) {
        double acc = 0.0;
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc) {
            const double w = (dr ? wr : 1.0 - wr) * (dc ? wc : 1.0 - wc);
            if (w == 0.0) continue;
            const long rr = static_cast<long>(r0) + dr, cc = static_cast<long>(c0) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(R) || cc >= static_cast<long>(C)) continue;
            acc += w * src[(static_cast<std::size_t>(rr) * C + cc) * 2 + k];
          }
        dst[(r * C + col) * 2 + k] = static_cast<float>(acc);
      }
    }
  out.bev = Tensor::from({R, C, 2}, std::move(dst));
  out.bev_boxes.clear();
  for (auto b : in.bev_boxes) {
    const double x = c * b.x - s * b.y + t.tx, y = s * b.x + c * b.y + t.ty;
    b.x = x;
    b.y = y;
    b.yaw = wrap_two_pi(b.yaw + t.rotation);
    if (g.in_bev(b.x, b.y)) out.bev_boxes.push_back(b);
  }
  return out;
}

inline SensorPair augment_rigid(const SensorPair& in, double max_rot_deg, double max_trans, std::uint64_t seed,
                                const SensorGeometry& g = {}) {
  return apply_rigid(in, sample_rigid(max_rot_deg, max_trans, seed), g);
}

}  // namespace lfusion
