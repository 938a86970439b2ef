#pragma once

// Scaled dot-product attention and the pre-norm transformer encoder layer
// used inside fusion blocks.

#include <cmath>
#include <string>

#include "lfusion/fusenet/layers.hpp"

namespace lfusion {

template <class T = float>
struct AttentionResult {
  BasicTensor<T> output;   // [..., T, dv]
  BasicTensor<T> weights;  // [..., T, T], rows sum to 1
};

/// softmax(Q K^T / sqrt(d_k)) V over the last two axes; leading axes batch.
template <class T = float>
AttentionResult<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) throw_shape("attention", q.shape(), k.shape());
  const std::size_t r = q.rank();
  if (q.dim(r - 1) != k.dim(r - 1)) throw_shape("attention", q.shape(), k.shape(), "d_k differs between Q and K");
  if (q.dim(r - 2) != k.dim(r - 2) || k.dim(r - 2) != v.dim(r - 2))
    throw_shape("attention", q.shape(), v.shape(), "token counts of Q, K, V differ");
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(q.dim(r - 1)));
  auto scores = scale(matmul(q, transpose(k, -2, -1)), inv_sqrt_dk);
  auto weights = softmax(scores, -1);
  return {matmul(weights, v), weights};
}

template <class T = float>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamSet<T>& ps, const std::string& name, std::size_t d_model, std::size_t heads)
      : d_model_(d_model), heads_(heads) {
    if (heads == 0 || d_model % heads != 0)
      throw std::invalid_argument("attention: d_model " + std::to_string(d_model) +
                                  " not divisible by num_heads " + std::to_string(heads));
    wq_ = LinearLayer<T>(ps, name + ".q", d_model, d_model);
    wk_ = LinearLayer<T>(ps, name + ".k", d_model, d_model);
    wv_ = LinearLayer<T>(ps, name + ".v", d_model, d_model);
    wo_ = LinearLayer<T>(ps, name + ".o", d_model, d_model);
  }

  /// x: [B, T, C]. Weights come back as [B, heads, T, T].
  AttentionResult<T> operator()(const BasicTensor<T>& x) const {
    const std::size_t B = x.dim(0), Tk = x.dim(1), dh = d_model_ / heads_;
    auto split_heads = [&](const BasicTensor<T>& t) { return permute(reshape(t, {B, Tk, heads_, dh}), {0, 2, 1, 3}); };
    auto res = attention(split_heads(wq_(x)), split_heads(wk_(x)), split_heads(wv_(x)));
    auto merged = reshape(permute(res.output, {0, 2, 1, 3}), {B, Tk, d_model_});
    return {wo_(merged), res.weights};
  }

  std::size_t heads() const { return heads_; }

 private:
  std::size_t d_model_ = 0, heads_ = 0;
  LinearLayer<T> wq_, wk_, wv_, wo_;
};

/// Pre-norm encoder layer: x + MHA(LN(x)), then x + FFN(LN(x)).
template <class T = float>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParamSet<T>& ps, const std::string& name, std::size_t d_model, std::size_t heads,
                   std::size_t ffn_mult = 4)
      : ln1_(ps, name + ".ln1", d_model),
        attn_(ps, name + ".attn", d_model, heads),
        ln2_(ps, name + ".ln2", d_model),
        ff1_(ps, name + ".ff1", d_model, ffn_mult * d_model),
        ff2_(ps, name + ".ff2", ffn_mult * d_model, d_model) {}

  AttentionResult<T> operator()(const BasicTensor<T>& x) const {
    auto a = attn_(ln1_(x));
    auto h = add(x, a.output);
    auto out = add(h, ff2_(relu(ff1_(ln2_(h)))));
    return {out, a.weights};
  }

 private:
  LayerNormLayer<T> ln1_;
  MultiHeadSelfAttention<T> attn_;
  LayerNormLayer<T> ln2_;
  LinearLayer<T> ff1_, ff2_;
};

}  // namespace lfusion
