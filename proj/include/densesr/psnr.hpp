#pragma once

#include <cmath>

#include "densesr/common.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

inline constexpr double kPsnrCapDb = 99.0;

struct PsnrValue {
  double db = 0.0;
  bool capped = false;  // MSE was exactly zero; db holds the cap sentinel
};

template <typename S>
PsnrValue psnr(const Tensor<S>& a, const Tensor<S>& b, double peak = 1.0) {
  if (a.shape() != b.shape()) {
    fail_config("psnr shape mismatch: ", a.shape().str(), " vs ", b.shape().str());
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return {kPsnrCapDb, true};
  return {10.0 * std::log10(peak * peak / mse), false};
}

}  // namespace densesr
