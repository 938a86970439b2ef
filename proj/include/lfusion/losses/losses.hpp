#pragma once

// Detection losses: foreground/background-split heat-map MSE, masked
// smooth-L1 box and yaw-offset regression, yaw-bin cross-entropy, and the
// per-task and cross-task weighted sums.

#include <stdexcept>
#include <string>
#include <utility>

#include "lfusion/diffcore/ops.hpp"
#include "lfusion/heads/geometry.hpp"

namespace lfusion {

struct LossWeights {
  double w_fg = 0.9;
  double w_bg = 0.1;
  double w_heat = 10.0;
  double w_bbox = 1.0;
  double w_theta = 0.2;
  double w_bev = 0.95;
  double w_2d = 0.05;

  bool operator==(const LossWeights&) const = default;

  void validate() const {
    for (double w : {w_fg, w_bg, w_heat, w_bbox, w_theta, w_bev, w_2d})
      if (!(w >= 0.0)) throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
};

namespace detail {

template <class T>
double mask_count(const BasicTensor<T>& mask) {
  double n = 0;
  for (T v : mask.data()) n += v != T(0);
  return n;
}

/// Repeats a [..., 1]-free mask along a new trailing axis of size c.
template <class T>
BasicTensor<T> expand_mask(const BasicTensor<T>& mask, std::size_t c) {
  Shape s = mask.shape();
  s.push_back(c);
  std::vector<T> v(mask.numel() * c);
  for (std::size_t i = 0; i < mask.numel(); ++i)
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = mask.data()[i];
  return BasicTensor<T>::from(std::move(s), std::move(v));
}

template <class T>
void check_same(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape(op, a.shape(), b.shape());
}

/// sum(mask * x) / count, or a constant zero when the mask is empty.
template <class T>
BasicTensor<T> masked_mean(const BasicTensor<T>& x, const BasicTensor<T>& mask, double count) {
  if (count == 0.0) return BasicTensor<T>::scalar(T(0));
  return scale(sum(mul(x, mask)), static_cast<T>(1.0 / count));
}

}  // namespace detail

template <class T = float>
struct HeatTerms {
  BasicTensor<T> mse_fg, mse_bg, total;
};

/// Heat-map MSE averaged separately over foreground (mask != 0) and
/// background cells, then combined as w_fg * fg + w_bg * bg.
template <class T>
HeatTerms<T> heat_loss_terms(const BasicTensor<T>& pred, const BasicTensor<T>& target, const BasicTensor<T>& fg_mask,
                             double w_fg, double w_bg) {
  detail::check_same("heat_loss", pred, target);
  detail::check_same("heat_loss", pred, fg_mask);
  std::vector<T> bg(fg_mask.numel());
  for (std::size_t i = 0; i < bg.size(); ++i) bg[i] = fg_mask.data()[i] != T(0) ? T(0) : T(1);
  const auto bg_mask = BasicTensor<T>::from(fg_mask.shape(), std::move(bg));
  const double n_fg = detail::mask_count(fg_mask);
  const double n_bg = static_cast<double>(fg_mask.numel()) - n_fg;
  const auto sq = square(sub(pred, target));
  HeatTerms<T> out;
  out.mse_fg = detail::masked_mean(sq, fg_mask, n_fg);
  out.mse_bg = detail::masked_mean(sq, bg_mask, n_bg);
  out.total = add(scale(out.mse_fg, static_cast<T>(w_fg)), scale(out.mse_bg, static_cast<T>(w_bg)));
  return out;
}

template <class T>
BasicTensor<T> heat_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, const BasicTensor<T>& fg_mask,
                         double w_fg, double w_bg) {
  return heat_loss_terms(pred, target, fg_mask, w_fg, w_bg).total;
}

/// Smooth-L1 over the four box channels, averaged over centre cells and
/// channels. center_mask is [B,H,W].
template <class T>
BasicTensor<T> box_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, const BasicTensor<T>& center_mask) {
  detail::check_same("box_loss", pred, target);
  const auto mask = detail::expand_mask(center_mask, pred.dim(pred.rank() - 1));
  detail::check_same("box_loss", pred, mask);
  return detail::masked_mean(smooth_l1(sub(pred, target)), mask,
                             detail::mask_count(center_mask) * static_cast<double>(pred.dim(pred.rank() - 1)));
}

template <class T = float>
struct YawTerms {
  BasicTensor<T> cls, offset;
};

/// Cross-entropy over yaw bins and smooth-L1 on the offset, both averaged
/// over centre cells. target_class is a one-hot [B,H,W,8] (zero rows are
/// ignored); target_offset is [B,H,W,1].
template <class T>
YawTerms<T> yaw_loss(const BasicTensor<T>& logits, const BasicTensor<T>& offset, const BasicTensor<T>& target_class,
                     const BasicTensor<T>& target_offset, const BasicTensor<T>& center_mask) {
  detail::check_same("yaw_loss", logits, target_class);
  detail::check_same("yaw_loss", offset, target_offset);
  const double n = detail::mask_count(center_mask);
  const auto onehot = mul(target_class, detail::expand_mask(center_mask, logits.dim(logits.rank() - 1)));
  YawTerms<T> out;
  out.cls = n == 0.0 ? BasicTensor<T>::scalar(T(0))
                     : scale(sum(mul(log_softmax(logits, -1), onehot)), static_cast<T>(-1.0 / n));
  const auto mask1 = detail::expand_mask(center_mask, 1);
  detail::check_same("yaw_loss", offset, mask1);
  out.offset = detail::masked_mean(smooth_l1(sub(offset, target_offset)), mask1, n);
  return out;
}

template <class T = float>
struct HeadLossTerms {
  BasicTensor<T> heat, bbox;
  BasicTensor<T> yaw_cls, yaw_offset;  // BEV only
};

/// BEV: w_heat*heat + w_bbox*bbox + w_theta*(yaw_cls + yaw_offset).
/// 2D:  w_heat*heat + w_bbox*bbox.
template <class T>
BasicTensor<T> task_loss(const HeadLossTerms<T>& t, HeadKind kind, const LossWeights& w) {
  const bool has_yaw = t.yaw_cls.defined() || t.yaw_offset.defined();
  if ((kind == HeadKind::kBev) != has_yaw || (has_yaw && !(t.yaw_cls.defined() && t.yaw_offset.defined())))
    throw std::invalid_argument(std::string("task_loss: yaw terms must be present exactly for the BEV head (kind ") +
                                to_string(kind) + ")");
  auto l = add(scale(t.heat, static_cast<T>(w.w_heat)), scale(t.bbox, static_cast<T>(w.w_bbox)));
  if (has_yaw) l = add(l, scale(add(t.yaw_cls, t.yaw_offset), static_cast<T>(w.w_theta)));
  return l;
}

/// w_bev * L_bev + w_2d * L_2d; an undefined task loss contributes zero.
template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& l_bev, const BasicTensor<T>& l_2d, double w_bev, double w_2d) {
  if (!(w_bev >= 0.0 && w_2d >= 0.0)) throw std::invalid_argument("total_loss: task weights must be non-negative");
  BasicTensor<T> out = BasicTensor<T>::scalar(T(0));
  if (l_bev.defined()) out = add(out, scale(l_bev, static_cast<T>(w_bev)));
  if (l_2d.defined()) out = add(out, scale(l_2d, static_cast<T>(w_2d)));
  return out;
}

}  // namespace lfusion
