#pragma once

// Rasterises a Scene into a BEV occupancy/height grid and a camera image.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "lfusion/diffcore/tensor.hpp"
#include "lfusion/heads/geometry.hpp"
#include "lfusion/scenesynth/scene.hpp"

namespace lfusion {

struct BevBox {
  Category category = Category::kVehicle;
  double x = 0.0, y = 0.0, l = 0.0, w = 0.0, yaw = 0.0;
  bool operator==(const BevBox&) const = default;
};

struct ImageBox {
  Category category = Category::kVehicle;
  double u0 = 0.0, v0 = 0.0, u1 = 0.0, v1 = 0.0;  // clipped to the image, pixels
  double depth = 0.0;                             // camera-frame range, used for ordering
  int object = -1;                                // index into Scene::objects
  bool operator==(const ImageBox&) const = default;
  double cu() const { return 0.5 * (u0 + u1); }
  double cv() const { return 0.5 * (v0 + v1); }
};

/// Raster layout shared by renderer, augmentations and evaluator.
struct SensorGeometry {
  std::size_t bev_rows = 64, bev_cols = 64;
  double bev_cell = 0.8;  // metres
  std::size_t image_rows = 32, image_cols = 96;
  double noise_sigma = 0.05;
  double dropout_range = 60.0;  // keep probability 1 - x / dropout_range
  double min_visible = 0.25;    // 2D boxes less visible than this are not annotated

  bool operator==(const SensorGeometry&) const = default;

  GridGeometry bev_raster() const { return bev_grid(bev_rows, bev_cols, bev_cell); }
  double bev_half_width() const { return 0.5 * static_cast<double>(bev_rows) * bev_cell; }
  double bev_depth() const { return static_cast<double>(bev_cols) * bev_cell; }
  bool in_bev(double x, double y) const {
    return x >= 0.0 && x < bev_depth() && y > -bev_half_width() && y <= bev_half_width();
  }
};

/// Model-facing observation. Carries no projection parameters.
struct SensorPair {
  Tensor bev;     // [rows, cols, 2]: occupancy, height / 2 m
  Tensor camera;  // [rows, cols, 3]: RGB
  std::vector<BevBox> bev_boxes;
  std::vector<ImageBox> image_boxes;  // nearest first
};

namespace detail {

inline double overlap1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

struct ImageRect {
  double u0, u1, v0, v1, depth;
  std::array<float, 3> colour;
  int object = -1;  // index into scene.objects, -1 for clutter
};

inline std::array<float, 3> object_colour(const SceneObject& o) {
  std::mt19937_64 rng(o.appearance);
  std::uniform_real_distribution<float> j(-0.08f, 0.08f);
  std::array<float, 3> base = o.category == Category::kVehicle ? std::array<float, 3>{0.85f, 0.3f, 0.2f}
                                                               : std::array<float, 3>{0.2f, 0.35f, 0.9f};
  for (auto& c : base) c = std::clamp(c + j(rng), 0.0f, 1.0f);
  return base;
}

}  // namespace detail

/// Deterministic in the scene (its seed drives dropout and noise).
inline SensorPair render_pair(const Scene& scene, const SensorGeometry& g = {}) {
  SensorPair out;
  const std::size_t R = g.bev_rows, C = g.bev_cols;
  std::vector<float> bev(R * C * 2, 0.0f);
  std::mt19937_64 rng(scene.seed ^ 0x72656e646572ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto raster = g.bev_raster();

  // BEV: sub-sampled footprint coverage, thinned with range.
  auto splat = [&](auto&& inside, double cx, double cy, double reach, double height) {
    const auto lo = raster.locate(cx - reach, cy + reach), hi = raster.locate(cx + reach, cy - reach);
    for (long r = std::max(0L, lo.row); r <= std::min<long>(R - 1, hi.row); ++r)
      for (long c = std::max(0L, lo.col); c <= std::min<long>(C - 1, hi.col); ++c) {
        int hits = 0;
        for (int sr = 0; sr < 3; ++sr)
          for (int sc = 0; sc < 3; ++sc)
            hits += inside(raster.a_at(c + (sc + 0.5) / 3.0), raster.b_at(r + (sr + 0.5) / 3.0));
        if (!hits) continue;
        const double x = raster.a_at(c + 0.5);
        const double keep = std::clamp(1.0 - x / g.dropout_range, 0.0, 1.0);
        if (unit(rng) >= keep) continue;
        auto* cell = &bev[(static_cast<std::size_t>(r) * C + c) * 2];
        cell[0] = std::max(cell[0], static_cast<float>(hits / 9.0));
        cell[1] = std::max(cell[1], static_cast<float>(height / 2.0));
      }
  };
  for (const auto& o : scene.objects)
    splat([&](double px, double py) { return o.contains(px, py); }, o.x, o.y, 0.5 * std::hypot(o.l, o.w), o.height);
  for (const auto& k : scene.clutter)
    splat([&](double px, double py) { return std::hypot(px - k.x, py - k.y) <= k.radius; }, k.x, k.y, k.radius,
          k.height);

  // Camera: project footprints, paint far to near with fractional coverage.
  const auto& p = scene.projection;
  const double W = static_cast<double>(g.image_cols), H = static_cast<double>(g.image_rows);
  std::vector<detail::ImageRect> rects;
  auto project = [&](const std::vector<std::array<double, 2>>& pts, double height, std::array<float, 3> colour,
                     int object) {
    double umin = 1e300, umax = -1e300, depth = 0.0;
    for (const auto& q : pts) {
      const auto cq = p.to_camera(q[0], q[1]);
      if (cq[0] <= 0.5) return;
      const double u = p.column(cq[0], cq[1]);
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      depth += cq[0];
    }
    depth /= static_cast<double>(pts.size());
    const double v1 = p.horizon + p.focal * p.mount_height / depth;
    const double v0 = p.horizon + p.focal * (p.mount_height - height) / depth;
    if (umax <= 0.0 || umin >= W || v1 <= 0.0 || v0 >= H) return;
    rects.push_back({umin, umax, v0, v1, depth, colour, object});
  };
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    const auto cs = o.corners();
    project({cs.begin(), cs.end()}, o.height, detail::object_colour(o), static_cast<int>(i));
  }
  for (const auto& k : scene.clutter)
    project({{k.x, k.y - k.radius}, {k.x, k.y + k.radius}}, k.height, {0.55f, 0.55f, 0.55f}, -1);
  std::sort(rects.begin(), rects.end(), [](const auto& a, const auto& b) { return a.depth > b.depth; });

  std::vector<float> img(g.image_rows * g.image_cols * 3);
  for (std::size_t r = 0; r < g.image_rows; ++r)
    for (std::size_t c = 0; c < g.image_cols; ++c) {
      float* px = &img[(r * g.image_cols + c) * 3];
      if (static_cast<double>(r) + 0.5 < p.horizon) {
        px[0] = 0.55f, px[1] = 0.65f, px[2] = 0.75f;
      } else {
        const float t = static_cast<float>((static_cast<double>(r) + 0.5 - p.horizon) / (H - p.horizon));
        px[0] = px[1] = 0.3f + 0.15f * t;
        px[2] = 0.28f + 0.1f * t;
      }
    }
  // Nearer coverage per pixel, for visibility of annotated objects.
  std::vector<double> occluded(g.image_rows * g.image_cols, 0.0);
  std::vector<double> visible(scene.objects.size(), 0.0), area(scene.objects.size(), 0.0);
  std::vector<detail::ImageRect> near_first(rects.rbegin(), rects.rend());
  for (const auto& rc : near_first) {
    const long c0 = std::max(0L, static_cast<long>(std::floor(rc.u0)));
    const long c1 = std::min<long>(g.image_cols - 1, static_cast<long>(std::floor(rc.u1)));
    const long r0 = std::max(0L, static_cast<long>(std::floor(rc.v0)));
    const long r1 = std::min<long>(g.image_rows - 1, static_cast<long>(std::floor(rc.v1)));
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) {
        const double cov = detail::overlap1d(rc.u0, rc.u1, c, c + 1.0) * detail::overlap1d(rc.v0, rc.v1, r, r + 1.0);
        if (cov <= 0.0) continue;
        auto& occ = occluded[r * g.image_cols + c];
        if (rc.object >= 0) {
          area[rc.object] += cov;
          visible[rc.object] += cov * (1.0 - occ);
        }
        occ = std::min(1.0, occ + cov * (1.0 - occ));
      }
  }
  for (const auto& rc : rects) {
    const long c0 = std::max(0L, static_cast<long>(std::floor(rc.u0)));
    const long c1 = std::min<long>(g.image_cols - 1, static_cast<long>(std::floor(rc.u1)));
    const long r0 = std::max(0L, static_cast<long>(std::floor(rc.v0)));
    const long r1 = std::min<long>(g.image_rows - 1, static_cast<long>(std::floor(rc.v1)));
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) {
        const double cov = detail::overlap1d(rc.u0, rc.u1, c, c + 1.0) * detail::overlap1d(rc.v0, rc.v1, r, r + 1.0);
        if (cov <= 0.0) continue;
        float* px = &img[(r * g.image_cols + c) * 3];
        // Darker lower third reads as a shadow/wheel band.
        const float shade = (static_cast<double>(r) + 0.5 > rc.v1 - (rc.v1 - rc.v0) / 3.0) ? 0.75f : 1.0f;
        for (int k = 0; k < 3; ++k)
          px[k] = static_cast<float>((1.0 - cov) * px[k] + cov * rc.colour[k] * shade);
      }
  }

  std::normal_distribution<float> noise(0.0f, static_cast<float>(g.noise_sigma));
  for (auto& v : bev) v += noise(rng);
  for (auto& v : img) v += noise(rng);
  out.bev = Tensor::from({R, C, 2}, std::move(bev));
  out.camera = Tensor::from({g.image_rows, g.image_cols, 3}, std::move(img));

  for (const auto& o : scene.objects)
    if (g.in_bev(o.x, o.y)) out.bev_boxes.push_back({o.category, o.x, o.y, o.l, o.w, o.yaw});
  for (const auto& rc : near_first) {
    if (rc.object < 0 || area[rc.object] <= 0.0) continue;
    if (visible[rc.object] / area[rc.object] < g.min_visible) continue;
    const double u0 = std::max(0.0, rc.u0), u1 = std::min(W, rc.u1);
    const double v0 = std::max(0.0, rc.v0), v1 = std::min(H, rc.v1);
    if (u1 <= u0 || v1 <= v0) continue;
    out.image_boxes.push_back({scene.objects[rc.object].category, u0, v0, u1, v1, rc.depth, rc.object});
  }
  return out;
}

}  // namespace lfusion
