#pragma once

// Per-cell heads: class heat map, box regression and (BEV only) yaw bin
// logits plus yaw offset, and decoding of heat-map peaks into detections.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "lfusion/fusenet/layers.hpp"
#include "lfusion/heads/geometry.hpp"
#include "lfusion/heads/yaw.hpp"

namespace lfusion {

/// Heat-map bias so that sigmoid(bias) ~= 0.1 before training.
inline constexpr double kHeatmapPriorBias = -2.19;

template <class T = float>
struct HeadOutput {
  BasicTensor<T> heatmap;     // [B, Hg, Wg, K], sigmoid applied
  BasicTensor<T> box;         // [B, Hg, Wg, 4]: dx, dy, log size0, log size1
  BasicTensor<T> yaw_class;   // [B, Hg, Wg, 8] logits, BEV only
  BasicTensor<T> yaw_offset;  // [B, Hg, Wg, 1] radians, BEV only
};

/// 3x3 conv + ReLU + 1x1 conv.
template <class T = float>
struct HeadBranch {
  Conv2dLayer<T> hidden, out;

  HeadBranch() = default;
  HeadBranch(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t mid, std::size_t cout,
             double out_bias = 0.0)
      : hidden(ps, name + ".hidden", cin, mid, 3, {1, 1}),
        out(ps, name + ".out", mid, cout, 1, {}, out_bias) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return out(relu(hidden(x))); }
};

template <class T = float>
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(ParamSet<T>& ps, const std::string& name, HeadKind kind, std::size_t in_channels,
                std::size_t hidden, std::size_t num_classes, std::size_t rows, std::size_t cols)
      : kind_(kind), in_channels_(in_channels), rows_(rows), cols_(cols) {
    heat_ = HeadBranch<T>(ps, name + ".heat", in_channels, hidden, num_classes, kHeatmapPriorBias);
    box_ = HeadBranch<T>(ps, name + ".box", in_channels, hidden, 4);
    if (kind == HeadKind::kBev) {
      yaw_class_ = HeadBranch<T>(ps, name + ".yaw_class", in_channels, hidden, kYawBins);
      yaw_offset_ = HeadBranch<T>(ps, name + ".yaw_offset", in_channels, hidden, 1);
    }
  }

  HeadKind kind() const { return kind_; }

  HeadOutput<T> operator()(const BasicTensor<T>& features) const {
    if (features.rank() != 4 || features.dim(1) != rows_ || features.dim(2) != cols_ ||
        features.dim(3) != in_channels_)
      throw_shape(std::string("head_forward(") + to_string(kind_) + ")", features.shape(),
                  {0, rows_, cols_, in_channels_}, "features do not match this head");
    HeadOutput<T> o;
    o.heatmap = sigmoid(heat_(features));
    o.box = box_(features);
    if (kind_ == HeadKind::kBev) {
      o.yaw_class = yaw_class_(features);
      o.yaw_offset = yaw_offset_(features);
    }
    return o;
  }

 private:
  HeadKind kind_ = HeadKind::kBev;
  std::size_t in_channels_ = 0, rows_ = 0, cols_ = 0;
  HeadBranch<T> heat_, box_, yaw_class_, yaw_offset_;
};

struct Detection {
  int category = 0;
  double score = 0.0;
  double a = 0.0, b = 0.0;          // BEV: x, y metres; 2D: u, v pixels
  double size0 = 0.0, size1 = 0.0;  // BEV: l, w metres; 2D: w, h pixels
  std::optional<double> yaw;        // BEV only
  long row = 0, col = 0;            // grid cell of the peak
};

struct DecodeOptions {
  double threshold = 0.3;
  std::size_t top_k = 64;
};

/// Peaks of one batch item. A cell is a peak when it exceeds the threshold
/// and is the maximum of its 3x3 neighbourhood in its category channel;
/// equal neighbouring maxima are resolved in favour of the first in raster
/// order, so no two returned peaks of one category are 8-neighbours.
template <class T>
std::vector<Detection> decode_detections(const HeadOutput<T>& out, std::size_t item, const GridGeometry& geom,
                                         const DecodeOptions& opt = {}) {
  if (!(opt.threshold > 0.0 && opt.threshold < 1.0))
    throw std::invalid_argument("decode_detections: threshold must lie in (0,1)");
  if (opt.top_k < 1) throw std::invalid_argument("decode_detections: top_k must be >= 1");
  const auto& hm = out.heatmap;
  const std::size_t H = hm.dim(1), W = hm.dim(2), K = hm.dim(3);
  if (H != geom.rows || W != geom.cols)
    throw_shape("decode_detections", hm.shape(), {0, geom.rows, geom.cols, K}, "grid geometry mismatch");
  const auto heat = hm.data().subspan(item * H * W * K, H * W * K);
  auto at = [&](long r, long c, std::size_t k) { return heat[(static_cast<std::size_t>(r) * W + c) * K + k]; };

  struct Peak {
    double score;
    std::size_t flat;  // (r*W + c)*K + k
  };
  std::vector<Peak> peaks;
  for (long r = 0; r < static_cast<long>(H); ++r)
    for (long c = 0; c < static_cast<long>(W); ++c)
      for (std::size_t k = 0; k < K; ++k) {
        const T v = at(r, c, k);
        if (!(static_cast<double>(v) > opt.threshold)) continue;
        bool peak = true;
        for (long dr = -1; dr <= 1 && peak; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            if (!dr && !dc) continue;
            const long rr = r + dr, cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
            const T n = at(rr, cc, k);
            const bool earlier = dr < 0 || (dr == 0 && dc < 0);
            if (n > v || (n == v && earlier)) {
              peak = false;
              break;
            }
          }
        if (peak) peaks.push_back({static_cast<double>(v), (static_cast<std::size_t>(r) * W + c) * K + k});
      }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& x, const Peak& y) { return x.score > y.score; });
  if (peaks.size() > opt.top_k) peaks.resize(opt.top_k);

  std::vector<Detection> dets;
  dets.reserve(peaks.size());
  for (const auto& p : peaks) {
    const std::size_t cell = p.flat / K;
    const long r = static_cast<long>(cell / W), c = static_cast<long>(cell % W);
    const std::size_t item_cell = item * H * W + cell;
    const auto box = out.box.data().subspan(item_cell * 4, 4);
    Detection d;
    d.category = static_cast<int>(p.flat % K);
    d.score = p.score;
    d.row = r;
    d.col = c;
    d.a = geom.a_at(static_cast<double>(c) + static_cast<double>(box[0]));
    d.b = geom.b_at(static_cast<double>(r) + static_cast<double>(box[1]));
    // Clamped so an untrained regressor still yields finite sizes.
    d.size0 = std::exp(std::clamp(static_cast<double>(box[2]), -8.0, 8.0));
    d.size1 = std::exp(std::clamp(static_cast<double>(box[3]), -8.0, 8.0));
    if (out.yaw_class.defined()) {
      const auto logits = out.yaw_class.data().subspan(item_cell * kYawBins, kYawBins);
      const int bin = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      d.yaw = decode_yaw(bin, static_cast<double>(out.yaw_offset.data()[item_cell]));
    }
    dets.push_back(d);
  }
  return dets;
}

}  // namespace lfusion
