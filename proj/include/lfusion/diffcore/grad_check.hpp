#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>

#include "lfusion/diffcore/tensor.hpp"

namespace lfusion {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
  std::string message;
};

/// Compares the tape gradient of a scalar function against central finite
/// differences. The error at element i is |analytic_i - numeric_i| divided by
/// max(max_j |analytic_j|, max_j |numeric_j|, 1e-6): normalising by the
/// gradient's overall scale keeps float32 round-off on near-zero entries from
/// dominating while any wrong rule still shows up at full size.
template <class T>
GradCheckReport grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& fn,
                           const BasicTensor<T>& input, double eps, double tol) {
  GradCheckReport rep;
  if (!(eps > 0.0)) {
    rep.message = "eps must be positive";
    return rep;
  }
  auto x = BasicTensor<T>::from(input.shape(), input.values(), true);
  auto y = fn(x);
  if (y.numel() != 1) {
    rep.message = "function output is not scalar: " + shape_str(y.shape());
    return rep;
  }
  if (!std::isfinite(static_cast<double>(y.item()))) {
    rep.message = "non-finite function value at the unperturbed input";
    return rep;
  }
  y.backward();
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad())
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = static_cast<double>(x.grad()[i]);

  std::vector<double> numeric(x.numel());
  {
    NoGradGuard guard;
    auto probe = BasicTensor<T>::from(input.shape(), input.values(), false);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const T orig = probe.data()[i];
      probe.data()[i] = static_cast<T>(static_cast<double>(orig) + eps);
      const double fp = static_cast<double>(fn(probe).item());
      probe.data()[i] = static_cast<T>(static_cast<double>(orig) - eps);
      const double fm = static_cast<double>(fn(probe).item());
      probe.data()[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        rep.worst_index = i;
        rep.max_rel_error = std::numeric_limits<double>::infinity();
        rep.message = "non-finite function value when perturbing element " + std::to_string(i);
        return rep;
      }
      numeric[i] = (fp - fm) / (2.0 * eps);
    }
  }
  double scale_ref = 1e-6;
  for (std::size_t i = 0; i < numeric.size(); ++i)
    scale_ref = std::max({scale_ref, std::abs(analytic[i]), std::abs(numeric[i])});
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / scale_ref;
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_error <= tol;
  rep.message = "max relative error " + std::to_string(rep.max_rel_error) + " at element " +
                std::to_string(rep.worst_index);
  return rep;
}

}  // namespace lfusion
