#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lfusion/diffcore/ops.hpp"

namespace lfusion {

/// Named parameter registry shared by every layer of a model. Layers keep
/// handles to the same nodes, so writing into a registered tensor (e.g. when
/// loading a checkpoint) updates the layer in place.
template <class T = float>
class ParamSet {
 public:
  using Tn = BasicTensor<T>;

  explicit ParamSet(std::uint64_t seed = 0) : rng_(seed) {}

  Tn uniform(const std::string& name, Shape shape, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(d(rng_));
    return add_param(name, Tn::from(std::move(shape), std::move(v), true));
  }

  Tn normal(const std::string& name, Shape shape, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(d(rng_));
    return add_param(name, Tn::from(std::move(shape), std::move(v), true));
  }

  Tn constant(const std::string& name, Shape shape, T value) {
    return add_param(name, Tn::full(std::move(shape), value, true));
  }

  const std::vector<std::pair<std::string, Tn>>& named() const { return params_; }

  std::vector<Tn> tensors() const {
    std::vector<Tn> out;
    out.reserve(params_.size());
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

 private:
  Tn add_param(const std::string& name, Tn t) {
    for (const auto& [n, _] : params_)
      if (n == name) throw std::logic_error("ParamSet: duplicate parameter name " + name);
    params_.emplace_back(name, t);
    return t;
  }

  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tn>> params_;
};

/// NHWC convolution, Kaiming-uniform weights, zero bias.
template <class T = float>
struct Conv2dLayer {
  BasicTensor<T> weight, bias;
  Conv2dOptions opt;

  Conv2dLayer() = default;
  Conv2dLayer(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              Conv2dOptions o = {}, double bias_init = 0.0)
      : opt(o) {
    const double fan_in = static_cast<double>(k * k * cin);
    weight = ps.uniform(name + ".weight", {k, k, cin, cout}, std::sqrt(6.0 / fan_in));
    bias = ps.constant(name + ".bias", {cout}, static_cast<T>(bias_init));
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, opt); }
};

/// y = x W + b over the last axis, Xavier-uniform weights.
template <class T = float>
struct LinearLayer {
  BasicTensor<T> weight, bias;

  LinearLayer() = default;
  LinearLayer(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, bool zero_init = false) {
    if (zero_init) {
      weight = ps.constant(name + ".weight", {in, out}, T(0));
    } else {
      weight = ps.uniform(name + ".weight", {in, out}, std::sqrt(6.0 / static_cast<double>(in + out)));
    }
    bias = ps.constant(name + ".bias", {out}, T(0));
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add(matmul(x, weight), bias); }
};

template <class T = float>
struct LayerNormLayer {
  BasicTensor<T> gamma, beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParamSet<T>& ps, const std::string& name, std::size_t n) {
    gamma = ps.constant(name + ".gamma", {n}, T(1));
    beta = ps.constant(name + ".beta", {n}, T(0));
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, -1, gamma, beta); }
};

}  // namespace lfusion
