#pragma once

// Seeded train/val/test splits of scenes, regenerated on demand, plus the
// JSON-lines manifest describing them.

#include "json.hpp"

#include <ostream>
#include <string>

#include "lfusion/losses/targets.hpp"
#include "lfusion/scenesynth/augment.hpp"

namespace lfusion {

enum class Split { kTrain, kVal, kTest };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct DatasetSpec {
  std::uint64_t seed = 1;
  std::size_t train_size = 2000, val_size = 500, test_size = 500;
  SceneParams scene;
  SensorGeometry sensors;

  std::size_t size(Split s) const {
    return s == Split::kTrain ? train_size : s == Split::kVal ? val_size : test_size;
  }
};

class Dataset {
 public:
  explicit Dataset(DatasetSpec spec)
      : spec_(std::move(spec)),
        projection_(sample_projection(spec_.seed, spec_.sensors.image_cols, spec_.sensors.image_rows)) {}

  const DatasetSpec& spec() const { return spec_; }
  /// Evaluator-side only.
  const HiddenProjection& projection() const { return projection_; }

  std::uint64_t scene_seed(Split split, std::size_t index) const {
    return splitmix64(splitmix64(spec_.seed ^ (0x5ca1ab1eULL + static_cast<std::uint64_t>(split))) + index);
  }

  Scene scene(Split split, std::size_t index) const {
    if (index >= spec_.size(split))
      throw std::out_of_range(std::string("dataset: index ") + std::to_string(index) + " beyond " + to_string(split) +
                              " split of " + std::to_string(spec_.size(split)));
    return sample_scene(scene_seed(split, index), spec_.scene, projection_);
  }

  SensorPair pair(Split split, std::size_t index) const { return render_pair(scene(split, index), spec_.sensors); }

  void write_manifest(std::ostream& os) const {
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
      for (std::size_t i = 0; i < spec_.size(s); ++i) {
        const auto sc = scene(s, i);
        nlohmann::json j{{"seed", sc.seed}, {"split", to_string(s)}, {"objects", sc.objects.size()}};
        os << j.dump() << '\n';
      }
  }

 private:
  DatasetSpec spec_;
  HiddenProjection projection_;
};

/// Head-grid annotations. The BEV head grid covers the same extent as the
/// BEV raster; the 2D grid covers the image.
inline std::vector<GridObject> bev_grid_objects(const SensorPair& pair) {
  std::vector<GridObject> out;
  for (const auto& b : pair.bev_boxes)
    out.push_back({static_cast<int>(b.category), b.x, b.y, b.l, b.w, b.yaw});
  return out;
}

inline std::vector<GridObject> image_grid_objects(const SensorPair& pair) {
  std::vector<GridObject> out;
  for (const auto& b : pair.image_boxes)
    out.push_back({static_cast<int>(b.category), b.cu(), b.cv(), b.u1 - b.u0, b.v1 - b.v0, std::nullopt});
  return out;
}

/// Stacks per-sample rasters into [B, H, W, C] model inputs.
inline Tensor stack_views(const std::vector<const Tensor*>& views) {
  if (views.empty()) throw std::invalid_argument("stack_views: empty batch");
  Shape s{views.size()};
  for (auto d : views[0]->shape()) s.push_back(d);
  std::vector<float> data;
  data.reserve(shape_numel(s));
  for (const auto* v : views) {
    if (v->shape() != views[0]->shape()) throw_shape("stack_views", v->shape(), views[0]->shape());
    data.insert(data.end(), v->data().begin(), v->data().end());
  }
  return Tensor::from(std::move(s), std::move(data));
}

}  // namespace lfusion
