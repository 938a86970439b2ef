#pragma once

// Calibration-free fusion block: pool each view to a token grid, flatten,
// concatenate, run transformer layers over the joint sequence, split,
// reshape, upsample back to each view and add residually. Views are related
// only through attention; no geometric mapping between them is used.

#include <string>
#include <utility>
#include <vector>

#include "lfusion/fusenet/attention.hpp"
#include "lfusion/fusenet/config.hpp"

namespace lfusion {

struct TokenGrid {
  std::size_t rows = 0, cols = 0;
  std::size_t count() const { return rows * cols; }
  bool operator==(const TokenGrid&) const = default;
};

/// Token grid used for a view of size h x w under pool size P. Each axis is
/// clamped to the view so narrow maps (e.g. a 2 x 6 camera map) still fuse.
inline TokenGrid clamped_token_grid(std::size_t h, std::size_t w, std::size_t pool) {
  return {std::min(pool, h), std::min(pool, w)};
}

template <class T = float>
struct ViewFeatures {
  BasicTensor<T> features;  // [B, H, W, C]
  ViewTag tag = ViewTag::kBev;
};

struct TokenRange {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
};

template <class T = float>
struct AttentionRecord {
  int stage = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
  BasicTensor<T> weights;           // [B, T, T], detached
  std::vector<ViewTag> tags;        // per view, in token order
  std::vector<TokenGrid> grids;     // per view
  std::vector<TokenRange> partition;

  std::size_t tokens() const { return weights.dim(1); }
  std::size_t batch() const { return weights.dim(0); }
  /// Row-major T x T matrix of batch item b.
  std::span<const T> matrix(std::size_t b) const {
    const std::size_t n = tokens() * tokens();
    return weights.data().subspan(b * n, n);
  }
};

template <class T = float>
struct FusionOutput {
  std::vector<ViewFeatures<T>> views;
  std::vector<AttentionRecord<T>> records;
  /// Attention-matrix entries computed per sample (instrumentation).
  std::size_t attention_entries = 0;
};

struct FusionViewSpec {
  ViewTag tag;
  std::size_t channels;
  TokenGrid grid;
};

template <class T = float>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(ParamSet<T>& ps, int stage, std::vector<FusionViewSpec> views, const FusionConfig& cfg)
      : stage_(stage), specs_(std::move(views)), pos_embedding_(cfg.positional_embedding) {
    cfg.validate();
    if (specs_.empty()) throw std::invalid_argument("FusionBlock: no views");
    const std::string base = "fusion" + std::to_string(stage);
    channels_ = specs_[0].channels;
    for (const auto& s : specs_)
      if (s.channels != channels_) throw std::invalid_argument("FusionBlock: views differ in channel count");
    d_model_ = cfg.d_model;
    if (channels_ != d_model_) in_proj_ = LinearLayer<T>(ps, base + ".in_proj", channels_, d_model_);
    for (std::size_t v = 0; v < specs_.size(); ++v) {
      const std::string vn = base + ".view" + std::to_string(v);
      if (pos_embedding_) {
        pos_.push_back(ps.normal(vn + ".pos", {specs_[v].grid.count(), d_model_}, cfg.positional_init_std));
        seg_.push_back(ps.normal(vn + ".segment", {d_model_}, cfg.positional_init_std));
      }
    }
    for (std::size_t l = 0; l < cfg.num_layers_per_fusion; ++l)
      layers_.emplace_back(ps, base + ".layer" + std::to_string(l), d_model_, cfg.num_heads);
    heads_ = cfg.num_heads;
    out_norm_ = LayerNormLayer<T>(ps, base + ".out_norm", d_model_);
    out_proj_ = LinearLayer<T>(ps, base + ".out_proj", d_model_, channels_, /*zero_init=*/true);
  }

  int stage() const { return stage_; }
  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& s : specs_) n += s.grid.count();
    return n;
  }
  const std::vector<FusionViewSpec>& view_specs() const { return specs_; }

  FusionOutput<T> operator()(const std::vector<ViewFeatures<T>>& views, bool record = false) const {
    if (views.size() != specs_.size())
      throw std::invalid_argument("FusionBlock: expected " + std::to_string(specs_.size()) + " views, got " +
                                  std::to_string(views.size()));
    const std::size_t B = views[0].features.dim(0);
    std::vector<BasicTensor<T>> token_seqs;
    std::vector<std::size_t> counts;
    std::vector<TokenRange> partition;
    std::size_t cursor = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto& f = views[v].features;
      const auto& spec = specs_[v];
      if (f.rank() != 4 || f.dim(3) != channels_ || f.dim(0) != B)
        throw_shape("fusion_block", f.shape(), {B, spec.grid.rows, spec.grid.cols, channels_});
      if (spec.grid.rows > f.dim(1) || spec.grid.cols > f.dim(2))
        throw_shape("fusion_block", f.shape(), {spec.grid.rows, spec.grid.cols}, "pool size exceeds view");
      auto tokens = reshape(adaptive_avg_pool2d(f, spec.grid.rows, spec.grid.cols), {B, spec.grid.count(), channels_});
      if (in_proj_.weight.defined()) tokens = in_proj_(tokens);
      if (pos_embedding_) tokens = add(add(tokens, pos_[v]), seg_[v]);
      token_seqs.push_back(tokens);
      counts.push_back(spec.grid.count());
      partition.push_back({cursor, cursor + spec.grid.count()});
      cursor += spec.grid.count();
    }
    auto x = token_seqs.size() == 1 ? token_seqs[0] : concat(token_seqs, 1);

    FusionOutput<T> out;
    const std::size_t Tn = cursor;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto res = layers_[l](x);
      x = res.output;
      out.attention_entries += res.weights.numel() / B;
      if (record) {
        // weights: [B, heads, T, T] -> one record per head.
        const auto& w = res.weights.values();
        for (std::size_t h = 0; h < heads_; ++h) {
          std::vector<T> m(B * Tn * Tn);
          for (std::size_t b = 0; b < B; ++b)
            std::copy_n(w.begin() + ((b * heads_ + h) * Tn * Tn), Tn * Tn, m.begin() + b * Tn * Tn);
          AttentionRecord<T> rec;
          rec.stage = stage_;
          rec.layer = l;
          rec.head = h;
          rec.weights = BasicTensor<T>::from({B, Tn, Tn}, std::move(m));
          for (const auto& s : specs_) {
            rec.tags.push_back(s.tag);
            rec.grids.push_back(s.grid);
          }
          rec.partition = partition;
          out.records.push_back(std::move(rec));
        }
      }
    }
    auto delta = out_proj_(out_norm_(x));
    auto parts = counts.size() == 1 ? std::vector<BasicTensor<T>>{delta} : split(delta, 1, counts);
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto& f = views[v].features;
      const auto& g = specs_[v].grid;
      auto grid = reshape(parts[v], {B, g.rows, g.cols, channels_});
      auto up = upsample2d_bilinear(grid, f.dim(1), f.dim(2));
      out.views.push_back({add(f, up), views[v].tag});
    }
    return out;
  }

  /// Direct access for tests that need to perturb the zero-initialised projection.
  LinearLayer<T>& output_projection() { return out_proj_; }

 private:
  int stage_ = 0;
  std::vector<FusionViewSpec> specs_;
  bool pos_embedding_ = true;
  std::size_t channels_ = 0, d_model_ = 0, heads_ = 0;
  LinearLayer<T> in_proj_;
  std::vector<BasicTensor<T>> pos_, seg_;
  std::vector<TransformerLayer<T>> layers_;
  LayerNormLayer<T> out_norm_;
  LinearLayer<T> out_proj_;
};

/// Entry count of a single-view attention map under the per-channel cost
/// model: (HW) x (HW) x C, i.e. H^2 W^2 C. Doubling H and W multiplies it by 16.
constexpr std::uint64_t attention_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
  return h * h * w * w * c;
}

}  // namespace lfusion
