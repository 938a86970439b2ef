#pragma once

#include <string>

#include "lfusion/fusenet/layers.hpp"

namespace lfusion {

/// Residual block (two 3x3 convs + skip) followed by 2x2 max-pool
/// downsampling: [B,H,W,Cin] -> [B,H/2,W/2,Cout].
template <class T = float>
class EncoderStage {
 public:
  EncoderStage() = default;
  EncoderStage(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout)
      : conv1_(ps, name + ".conv1", cin, cout, 3, {1, 1}), conv2_(ps, name + ".conv2", cout, cout, 3, {1, 1}) {
    if (cin != cout) skip_ = Conv2dLayer<T>(ps, name + ".skip", cin, cout, 1);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
      throw ShapeError("encoder_stage: spatial dimensions of " + shape_str(x.shape()) + " must be even");
    auto h = conv2_(relu(conv1_(x)));
    auto s = skip_.weight.defined() ? skip_(x) : x;
    return max_pool2d(relu(add(h, s)), 2);
  }

 private:
  Conv2dLayer<T> conv1_, conv2_, skip_;
};

/// Bilinear x2 upsample of `deep`, channel concat with `skip`, 1x1 conv.
template <class T = float>
BasicTensor<T> upsample_merge(const BasicTensor<T>& deep, const BasicTensor<T>& skip, const Conv2dLayer<T>& proj) {
  if (deep.rank() != 4 || skip.rank() != 4 || skip.dim(0) != deep.dim(0) || skip.dim(1) != 2 * deep.dim(1) ||
      skip.dim(2) != 2 * deep.dim(2))
    throw_shape("upsample_merge", deep.shape(), skip.shape(), "skip must be exactly twice the deep resolution");
  auto up = upsample2d_bilinear(deep, 2);
  return proj(concat<T>({up, skip}, 3));
}

}  // namespace lfusion
