#pragma once

// Model + heads built from a RunConfig, batch assembly, the combined loss,
// and split evaluation.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lfusion/cli/run_config.hpp"
#include "lfusion/evalkit/evaluator.hpp"
#include "lfusion/evalkit/focus.hpp"
#include "lfusion/fusenet/model.hpp"
#include "lfusion/heads/heads.hpp"
#include "lfusion/losses/targets.hpp"
#include "lfusion/scenesynth/augment.hpp"

namespace lfusion {

inline const std::vector<std::string>& category_names() {
  static const std::vector<std::string> names{"vehicle", "pedestrian"};
  return names;
}

/// Network, heads and their shared parameter registry.
class Detector {
 public:
  explicit Detector(const RunConfig& cfg)
      : cfg_(cfg), ps_(splitmix64(cfg.seed ^ 0x1f2e3d4c5b6a7988ULL)), net_(ps_, cfg.model_config()) {
    const auto m = cfg.model_config();
    bev_geom_ = bev_grid(m.bev.height / 2, m.bev.width / 2, 2.0 * cfg.bev_cell);
    image_geom_ = image_grid(m.camera.height / 2, m.camera.width / 2, 2.0);
    if (cfg.has_bev_head())
      bev_head_ = DetectionHead<float>(ps_, "head_bev", HeadKind::kBev, m.decoder_channels, m.head_hidden,
                                       m.num_classes, bev_geom_.rows, bev_geom_.cols);
    if (cfg.has_2d_head())
      head_2d_ = DetectionHead<float>(ps_, "head_2d", HeadKind::k2d, m.decoder_channels, m.head_hidden, m.num_classes,
                                      image_geom_.rows, image_geom_.cols);
  }

  const RunConfig& config() const { return cfg_; }
  ParamSet<float>& params() { return ps_; }
  const ParamSet<float>& params() const { return ps_; }
  FuseNet<float>& network() { return net_; }
  const FuseNet<float>& network() const { return net_; }
  const std::optional<DetectionHead<float>>& bev_head() const { return bev_head_; }
  const std::optional<DetectionHead<float>>& head_2d() const { return head_2d_; }
  const GridGeometry& bev_geometry() const { return bev_geom_; }
  const GridGeometry& image_geometry() const { return image_geom_; }

  struct Output {
    ModelOutputs<float> features;
    std::optional<HeadOutput<float>> bev, image;
  };

  Output forward(const Tensor& bev, const Tensor& camera, bool record = false) const {
    Output o;
    const auto mod = cfg_.modality;
    o.features = net_(uses_bev(mod) ? bev : Tensor{}, uses_camera(mod) ? camera : Tensor{}, record);
    if (bev_head_) o.bev = (*bev_head_)(o.features.bev);
    if (head_2d_) o.image = (*head_2d_)(o.features.camera);
    return o;
  }

 private:
  RunConfig cfg_;
  ParamSet<float> ps_;
  FuseNet<float> net_;
  GridGeometry bev_geom_, image_geom_;
  std::optional<DetectionHead<float>> bev_head_, head_2d_;
};

struct Batch {
  Tensor bev, camera;
  std::optional<TargetBatch<float>> bev_targets, image_targets;
};

inline Batch make_batch(const std::vector<SensorPair>& pairs, const Detector& det) {
  Batch b;
  std::vector<const Tensor*> bev, cam;
  std::vector<GridTargets> tb, ti;
  for (const auto& p : pairs) {
    bev.push_back(&p.bev);
    cam.push_back(&p.camera);
    if (det.bev_head())
      tb.push_back(build_targets(bev_grid_objects(p), det.bev_geometry(), kNumCategories, HeadKind::kBev));
    if (det.head_2d())
      ti.push_back(build_targets(image_grid_objects(p), det.image_geometry(), kNumCategories, HeadKind::k2d));
  }
  b.bev = stack_views(bev);
  b.camera = stack_views(cam);
  if (!tb.empty()) b.bev_targets = stack_targets<float>(tb, HeadKind::kBev);
  if (!ti.empty()) b.image_targets = stack_targets<float>(ti, HeadKind::k2d);
  return b;
}

struct LossBreakdown {
  Tensor total;
  double value = 0.0;
  std::optional<double> bev, heat_bev, bbox_bev, yaw_cls, yaw_offset;
  std::optional<double> image, heat_2d, bbox_2d;

  nlohmann::json to_json() const {
    nlohmann::json j{{"loss", value}};
    auto put = [&](const char* k, const std::optional<double>& v) {
      if (v) j[k] = *v;
    };
    put("loss_bev", bev);
    put("heat_bev", heat_bev);
    put("bbox_bev", bbox_bev);
    put("yaw_cls", yaw_cls);
    put("yaw_offset", yaw_offset);
    put("loss_2d", image);
    put("heat_2d", heat_2d);
    put("bbox_2d", bbox_2d);
    return j;
  }
  bool finite() const {
    auto ok = [](const std::optional<double>& v) { return !v || std::isfinite(*v); };
    return std::isfinite(value) && ok(bev) && ok(heat_bev) && ok(bbox_bev) && ok(yaw_cls) && ok(yaw_offset) &&
           ok(image) && ok(heat_2d) && ok(bbox_2d);
  }
};

inline LossBreakdown compute_loss(const Detector::Output& out, const Batch& batch, const LossWeights& w) {
  LossBreakdown lb;
  Tensor l_bev, l_2d;
  if (out.bev) {
    const auto& t = *batch.bev_targets;
    HeadLossTerms<float> terms;
    terms.heat = heat_loss(out.bev->heatmap, t.heatmap, t.fg_mask, w.w_fg, w.w_bg);
    terms.bbox = box_loss(out.bev->box, t.box, t.center_mask);
    auto yaw = yaw_loss(out.bev->yaw_class, out.bev->yaw_offset, t.yaw_class, t.yaw_offset, t.center_mask);
    terms.yaw_cls = yaw.cls;
    terms.yaw_offset = yaw.offset;
    l_bev = task_loss(terms, HeadKind::kBev, w);
    lb.bev = l_bev.item();
    lb.heat_bev = terms.heat.item();
    lb.bbox_bev = terms.bbox.item();
    lb.yaw_cls = terms.yaw_cls.item();
    lb.yaw_offset = terms.yaw_offset.item();
  }
  if (out.image) {
    const auto& t = *batch.image_targets;
    HeadLossTerms<float> terms;
    terms.heat = heat_loss(out.image->heatmap, t.heatmap, t.fg_mask, w.w_fg, w.w_bg);
    terms.bbox = box_loss(out.image->box, t.box, t.center_mask);
    l_2d = task_loss(terms, HeadKind::k2d, w);
    lb.image = l_2d.item();
    lb.heat_2d = terms.heat.item();
    lb.bbox_2d = terms.bbox.item();
  }
  lb.total = total_loss(l_bev, l_2d, w.w_bev, w.w_2d);
  lb.value = lb.total.item();
  return lb;
}

struct EvalOptions {
  Split split = Split::kVal;
  double max_rot = 0.0;  // test-time rigid perturbation of the BEV view
  double max_trans = 0.0;
  std::uint64_t seed = 0;
  std::size_t frames = 0;  // 0: whole split
  bool focus = true;
};

inline EvalBox to_eval_box(const Detection& d) { return {d.category, d.a, d.b, d.size0, d.size1, d.yaw, d.score}; }

/// Frame seed of the test-time perturbation of frame i.
inline std::uint64_t perturbation_seed(std::uint64_t seed, std::size_t i) {
  return splitmix64(splitmix64(seed ^ 0x7e57ab1e5eedULL) + i);
}

/// Runs inference over a split and aggregates metrics. The focus score
/// needs the unperturbed geometry and is only computed without perturbation.
inline MetricsSummary evaluate(const Detector& det, const Dataset& ds, const EvalOptions& opt) {
  NoGradGuard ng;
  const auto& cfg = det.config();
  const auto& g = ds.spec().sensors;
  const bool perturbed = opt.max_rot > 0.0 || opt.max_trans > 0.0;
  const bool focus = opt.focus && !perturbed && !cfg.fusion_stages.empty() && cfg.modality == Modality::kFusion;
  std::size_t n = ds.spec().size(opt.split);
  if (opt.frames) n = std::min(n, opt.frames);
  DetectionEvaluator ev(kNumCategories, det.head_2d().has_value());
  const DecodeOptions dopt{cfg.score_threshold, cfg.top_k};
  double focus_sum = 0.0;
  std::size_t focus_n = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    const std::size_t end = std::min(n, start + cfg.batch_size);
    std::vector<SensorPair> pairs;
    for (std::size_t i = start; i < end; ++i) {
      auto p = ds.pair(opt.split, i);
      if (perturbed) p = augment_rigid(p, opt.max_rot, opt.max_trans, perturbation_seed(opt.seed, i), g);
      pairs.push_back(std::move(p));
    }
    const auto batch = make_batch(pairs, det);
    const auto out = det.forward(batch.bev, batch.camera, focus);
    for (std::size_t b = 0; b < pairs.size(); ++b) {
      const auto& p = pairs[b];
      std::vector<EvalBox> dets, gts;
      for (const auto& d : decode_detections(*out.bev, b, det.bev_geometry(), dopt)) dets.push_back(to_eval_box(d));
      for (const auto& x : p.bev_boxes) gts.push_back({static_cast<int>(x.category), x.x, x.y, x.l, x.w, x.yaw, 1.0});
      ev.add_bev_frame(dets, gts);
      if (out.image) {
        dets.clear();
        gts.clear();
        for (const auto& d : decode_detections(*out.image, b, det.image_geometry(), dopt)) dets.push_back(to_eval_box(d));
        for (const auto& x : p.image_boxes)
          gts.push_back({static_cast<int>(x.category), x.cu(), x.cv(), x.u1 - x.u0, x.v1 - x.v0, std::nullopt, 1.0});
        ev.add_image_frame(dets, gts);
      }
      if (focus)
        for (const auto& f : attention_focus(out.features.records, b, p, ds.projection(), g)) {
          focus_sum += f.ratio;
          ++focus_n;
        }
    }
  }
  auto s = ev.summary();
  if (focus_n) s.focus_ratio_mean = focus_sum / static_cast<double>(focus_n);
  return s;
}

}  // namespace lfusion
