#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <array>

namespace lfusion {

enum class Modality { kFusion, kLidarOnly, kCameraOnly };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::kFusion: return "fusion";
    case Modality::kLidarOnly: return "lidar_only";
    case Modality::kCameraOnly: return "camera_only";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "fusion") return Modality::kFusion;
  if (s == "lidar_only") return Modality::kLidarOnly;
  if (s == "camera_only") return Modality::kCameraOnly;
  throw std::invalid_argument("unknown modality '" + s + "'");
}

inline bool uses_bev(Modality m) { return m != Modality::kCameraOnly; }
inline bool uses_camera(Modality m) { return m != Modality::kLidarOnly; }

enum class ViewTag { kCamera, kBev };

struct FusionConfig {
  std::set<int> fusion_stages{3, 4};
  std::size_t pool_size = 8;
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers_per_fusion = 2;
  bool positional_embedding = true;
  double positional_init_std = 0.02;
  Modality modality = Modality::kFusion;

  void validate() const {
    if (pool_size == 0) throw std::invalid_argument("FusionConfig: pool_size must be positive");
    if (d_model == 0 || num_heads == 0 || num_layers_per_fusion == 0)
      throw std::invalid_argument("FusionConfig: d_model, num_heads and num_layers_per_fusion must be positive");
    if (!(positional_init_std >= 0.0)) throw std::invalid_argument("FusionConfig: positional_init_std must be non-negative");
    if (d_model % num_heads != 0)
      throw std::invalid_argument("FusionConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
    for (int s : fusion_stages)
      if (s < 1 || s > 4) throw std::invalid_argument("FusionConfig: fusion stage " + std::to_string(s) + " not in 1..4");
    if (modality != Modality::kFusion && !fusion_stages.empty())
      throw std::invalid_argument("FusionConfig: fusion_stages must be empty for modality " + to_string(modality));
  }
};

/// Input raster size of one branch (H x W x C).
struct ViewGeometry {
  std::size_t height = 0, width = 0, channels = 0;
};

struct ModelConfig {
  FusionConfig fusion;
  ViewGeometry bev{64, 64, 2};
  ViewGeometry camera{32, 96, 3};
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 64};
  std::size_t decoder_channels = 32;
  std::size_t head_hidden = 16;
  std::size_t num_classes = 2;

  void validate() const {
    fusion.validate();
    for (auto c : stage_channels)
      if (c == 0) throw std::invalid_argument("ModelConfig: stage channels must be positive");
    if (decoder_channels == 0 || head_hidden == 0 || num_classes == 0)
      throw std::invalid_argument("ModelConfig: decoder/head sizes must be positive");
  }
};

}  // namespace lfusion
