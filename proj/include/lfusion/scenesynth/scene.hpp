#pragma once

// Procedural scenes: objects on the ground plane around the ego vehicle plus
// a hidden camera mounting that relates the two rendered views.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfusion {

enum class Category { kVehicle = 0, kPedestrian = 1 };
inline constexpr std::size_t kNumCategories = 2;

inline const char* to_string(Category c) { return c == Category::kVehicle ? "vehicle" : "pedestrian"; }

struct SceneObject {
  Category category = Category::kVehicle;
  double x = 0.0, y = 0.0;  // forward, lateral (left positive), metres
  double l = 0.0, w = 0.0;  // along / across heading
  double yaw = 0.0;         // radians, 0 = facing +x
  double height = 0.0;      // metres
  std::uint64_t appearance = 0;

  bool operator==(const SceneObject&) const = default;

  std::array<std::array<double, 2>, 4> corners() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    std::array<std::array<double, 2>, 4> out{};
    const double hl = 0.5 * l, hw = 0.5 * w;
    const double sx[4] = {hl, hl, -hl, -hl}, sy[4] = {hw, -hw, -hw, hw};
    for (int i = 0; i < 4; ++i) out[i] = {x + c * sx[i] - s * sy[i], y + s * sx[i] + c * sy[i]};
    return out;
  }

  bool contains(double px, double py) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double dx = px - x, dy = py - y;
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return std::abs(u) <= 0.5 * l && std::abs(v) <= 0.5 * w;
  }
};

/// Small roadside structures: present in the BEV raster, drawn as grey
/// posts in the camera, never annotated.
struct ClutterItem {
  double x = 0.0, y = 0.0, radius = 0.0, height = 0.0;
  bool operator==(const ClutterItem&) const = default;
};

/// Camera mounting relative to the BEV frame. Known to the generator and the
/// evaluator only.
struct HiddenProjection {
  double focal = 40.0;       // px
  double principal = 48.0;   // px, image column of the optical axis
  double rotation = 0.0;     // rad, mount yaw
  double tx = 0.0, ty = 0.0; // mount position, metres
  double mount_height = 1.6; // metres above ground
  double horizon = 12.0;     // image row of the horizon

  bool operator==(const HiddenProjection&) const = default;

  /// BEV point to camera frame (forward x', lateral y').
  std::array<double, 2> to_camera(double x, double y) const {
    const double dx = x - tx, dy = y - ty;
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {c * dx + s * dy, -s * dx + c * dy};
  }
  /// Image column of a camera-frame point (x' > 0).
  double column(double xc, double yc) const { return focal * (yc / xc) + principal; }
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  std::vector<ClutterItem> clutter;
  HiddenProjection projection;
};

struct SceneParams {
  std::size_t min_objects = 1, max_objects = 8;
  double vehicle_fraction = 0.75;
  std::size_t min_clutter = 0, max_clutter = 6;
  double min_x = 2.0, max_x = 50.0, max_abs_y = 24.0;
  double min_spacing = 2.5;  // metres between object footprints' centres
  std::size_t max_attempts = 1000;

  std::string describe() const {
    return "objects " + std::to_string(min_objects) + ".." + std::to_string(max_objects) + ", clutter " +
           std::to_string(min_clutter) + ".." + std::to_string(max_clutter) + ", min spacing " +
           std::to_string(min_spacing) + " m, x in [" + std::to_string(min_x) + "," + std::to_string(max_x) +
           "], |y| <= " + std::to_string(max_abs_y);
  }
};

/// Camera parameters for an image `width` pixels wide and `height` tall,
/// drawn once per dataset.
inline HiddenProjection sample_projection(std::uint64_t seed, std::size_t width = 96, std::size_t height = 32) {
  std::mt19937_64 rng(seed ^ 0x70726f6aULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double s = static_cast<double>(width) / 96.0;
  HiddenProjection p;
  p.focal = (40.0 + 4.0 * u(rng)) * s;
  p.principal = 0.5 * static_cast<double>(width) + 3.0 * s * u(rng);
  p.rotation = (5.0 * u(rng)) * std::numbers::pi / 180.0;
  p.tx = 0.5 * u(rng);
  p.ty = 0.5 * u(rng);
  p.mount_height = 1.6;
  p.horizon = 0.375 * static_cast<double>(height);
  return p;
}

namespace detail {

/// Separating-axis test for two oriented rectangles.
inline bool footprints_overlap(const SceneObject& a, const SceneObject& b) {
  const auto ca = a.corners(), cb = b.corners();
  for (const auto* poly : {&ca, &cb})
    for (int i = 0; i < 2; ++i) {
      const auto& p0 = (*poly)[i];
      const auto& p1 = (*poly)[i + 1];
      const double ax = p1[1] - p0[1], ay = -(p1[0] - p0[0]);
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const auto& q : ca) {
        const double d = q[0] * ax + q[1] * ay;
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      for (const auto& q : cb) {
        const double d = q[0] * ax + q[1] * ay;
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      if (amax <= bmin || bmax <= amin) return false;
    }
  return true;
}

}  // namespace detail

class SceneBudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic in (seed, params, projection). Objects never overlap and
/// keep min_spacing between centres; clutter keeps clear of objects.
inline Scene sample_scene(std::uint64_t seed, const SceneParams& params, const HiddenProjection& projection) {
  if (params.min_objects > params.max_objects || params.min_clutter > params.max_clutter)
    throw std::invalid_argument("sample_scene: inverted count range (" + params.describe() + ")");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto count = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  Scene s;
  s.seed = seed;
  s.projection = projection;
  const std::size_t n = count(params.min_objects, params.max_objects);
  std::size_t attempts = 0;
  while (s.objects.size() < n) {
    if (++attempts > params.max_attempts)
      throw SceneBudgetError("sample_scene: placement budget of " + std::to_string(params.max_attempts) +
                             " attempts exhausted for seed " + std::to_string(seed) + " (" + params.describe() + ")");
    SceneObject o;
    o.category = unit(rng) < params.vehicle_fraction ? Category::kVehicle : Category::kPedestrian;
    if (o.category == Category::kVehicle) {
      o.l = uni(3.5, 5.5);
      o.w = uni(1.6, 2.2);
      o.height = uni(1.4, 2.0);
    } else {
      o.l = uni(0.4, 0.9);
      o.w = uni(0.4, 0.9);
      o.height = uni(1.5, 1.9);
    }
    o.x = uni(params.min_x, params.max_x);
    o.y = uni(-params.max_abs_y, params.max_abs_y);
    o.yaw = uni(0.0, 2.0 * std::numbers::pi);
    o.appearance = rng();
    bool ok = true;
    for (const auto& other : s.objects) {
      if (std::hypot(o.x - other.x, o.y - other.y) < params.min_spacing || detail::footprints_overlap(o, other)) {
        ok = false;
        break;
      }
    }
    if (ok) s.objects.push_back(o);
  }
  const std::size_t nc = count(params.min_clutter, params.max_clutter);
  for (std::size_t i = 0, tries = 0; i < nc && tries < params.max_attempts; ++tries) {
    ClutterItem c{uni(params.min_x, params.max_x), uni(-params.max_abs_y, params.max_abs_y), uni(0.2, 0.45),
                  uni(1.3, 2.0)};
    bool ok = true;
    for (const auto& o : s.objects)
      if (std::hypot(c.x - o.x, c.y - o.y) < params.min_spacing) ok = false;
    if (ok) {
      s.clutter.push_back(c);
      ++i;
    }
  }
  return s;
}

}  // namespace lfusion
