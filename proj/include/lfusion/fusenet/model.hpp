#pragma once

// Two-branch encoder with optional fusion after each of the four stages and
// a three-step upsampling decoder per branch.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lfusion/fusenet/encoder.hpp"
#include "lfusion/fusenet/fusion.hpp"

namespace lfusion {

template <class T = float>
struct ModelOutputs {
  BasicTensor<T> bev;     // [B, Hb/2, Wb/2, Cdec] or undefined
  BasicTensor<T> camera;  // [B, Hc/2, Wc/2, Cdec] or undefined
  std::vector<AttentionRecord<T>> records;
  std::array<BasicTensor<T>, 4> bev_stages;     // post-fusion stage outputs
  std::array<BasicTensor<T>, 4> camera_stages;
  std::size_t attention_entries = 0;
};

template <class T = float>
class FuseNet {
 public:
  FuseNet(ParamSet<T>& ps, const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const auto& ch = cfg.stage_channels;
    const bool bev = uses_bev(cfg.fusion.modality), cam = uses_camera(cfg.fusion.modality);
    auto build_branch = [&](const std::string& name, const ViewGeometry& g, auto& stages, auto& merges) {
      if (g.height % 16 != 0 || g.width % 16 != 0)
        throw std::invalid_argument("FuseNet: " + name + " input must be divisible by 16 for four stages");
      std::size_t cin = g.channels;
      for (int s = 0; s < 4; ++s) {
        stages[s] = EncoderStage<T>(ps, name + ".stage" + std::to_string(s + 1), cin, ch[s]);
        cin = ch[s];
      }
      // Merges combine stage4+stage3, then result+stage2, then result+stage1.
      std::size_t deep = ch[3];
      for (int m = 0; m < 3; ++m) {
        const std::size_t skip_ch = ch[2 - m];
        merges[m] = Conv2dLayer<T>(ps, name + ".up" + std::to_string(m + 1), deep + skip_ch, cfg.decoder_channels, 1);
        deep = cfg.decoder_channels;
      }
    };
    if (bev) build_branch("bev", cfg.bev, bev_stages_, bev_merges_);
    if (cam) build_branch("camera", cfg.camera, cam_stages_, cam_merges_);
    for (int s : cfg.fusion.fusion_stages) {
      const std::size_t div = std::size_t{2} << (s - 1);
      std::vector<FusionViewSpec> specs{
          {ViewTag::kBev, ch[s - 1], clamped_token_grid(cfg.bev.height / div, cfg.bev.width / div, cfg.fusion.pool_size)},
          {ViewTag::kCamera, ch[s - 1],
           clamped_token_grid(cfg.camera.height / div, cfg.camera.width / div, cfg.fusion.pool_size)}};
      fusions_.emplace(s, FusionBlock<T>(ps, s, std::move(specs), cfg.fusion));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const FusionBlock<T>* fusion_block(int stage) const {
    auto it = fusions_.find(stage);
    return it == fusions_.end() ? nullptr : &it->second;
  }
  FusionBlock<T>* fusion_block(int stage) {
    auto it = fusions_.find(stage);
    return it == fusions_.end() ? nullptr : &it->second;
  }

  /// bev: [B,Hb,Wb,Cb]; camera: [B,Hc,Wc,Cc]. A branch absent from the
  /// modality must be passed as an undefined tensor.
  ModelOutputs<T> operator()(const BasicTensor<T>& bev, const BasicTensor<T>& camera, bool record = false) const {
    const Modality mod = cfg_.fusion.modality;
    check_input("bev", bev, cfg_.bev, uses_bev(mod));
    check_input("camera", camera, cfg_.camera, uses_camera(mod));
    if (bev.defined() && camera.defined() && bev.dim(0) != camera.dim(0))
      throw_shape("model_forward", bev.shape(), camera.shape(), "batch sizes differ");

    ModelOutputs<T> out;
    BasicTensor<T> xb = bev, xc = camera;
    for (int s = 1; s <= 4; ++s) {
      if (xb.defined()) xb = bev_stages_[s - 1](xb);
      if (xc.defined()) xc = cam_stages_[s - 1](xc);
      if (auto it = fusions_.find(s); it != fusions_.end()) {
        auto fused = it->second({{xb, ViewTag::kBev}, {xc, ViewTag::kCamera}}, record);
        xb = fused.views[0].features;
        xc = fused.views[1].features;
        out.attention_entries += fused.attention_entries;
        for (auto& r : fused.records) out.records.push_back(std::move(r));
      }
      if (xb.defined()) out.bev_stages[s - 1] = xb;
      if (xc.defined()) out.camera_stages[s - 1] = xc;
    }
    if (xb.defined()) out.bev = decode(out.bev_stages, bev_merges_);
    if (xc.defined()) out.camera = decode(out.camera_stages, cam_merges_);
    return out;
  }

 private:
  static void check_input(const char* name, const BasicTensor<T>& x, const ViewGeometry& g, bool expected) {
    if (!expected) {
      if (x.defined()) throw std::invalid_argument(std::string("model_forward: modality does not use the ") + name + " view");
      return;
    }
    if (!x.defined()) throw std::invalid_argument(std::string("model_forward: modality requires a ") + name + " input");
    if (x.rank() != 4 || x.dim(1) != g.height || x.dim(2) != g.width || x.dim(3) != g.channels)
      throw_shape("model_forward", x.shape(), {0, g.height, g.width, g.channels}, name);
  }

  static BasicTensor<T> decode(const std::array<BasicTensor<T>, 4>& stages,
                               const std::array<Conv2dLayer<T>, 3>& merges) {
    auto x = stages[3];
    for (int m = 0; m < 3; ++m) x = relu(upsample_merge(x, stages[2 - m], merges[m]));
    return x;
  }

  ModelConfig cfg_;
  std::array<EncoderStage<T>, 4> bev_stages_, cam_stages_;
  std::array<Conv2dLayer<T>, 3> bev_merges_, cam_merges_;
  std::map<int, FusionBlock<T>> fusions_;
};

}  // namespace lfusion
