#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

// Decimation by keeping the top-left sample of each s x s block; the
// degradation model used to manufacture low-resolution inputs.
template <typename S>
Tensor<S> nn_downsample(const Tensor<S>& hr, int s) {
  if (s < 1) fail_config("downsample factor must be >= 1, got ", s);
  const Shape in = hr.shape();
  if (in.h % s != 0 || in.w % s != 0) {
    fail_config("image dims ", in.str(), " not divisible by scale ", s);
  }
  Tensor<S> out(Shape{in.n, in.c, in.h / s, in.w / s});
  for (int b = 0; b < in.n; ++b)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < in.h / s; ++y)
        for (int x = 0; x < in.w / s; ++x) {
          out.at(b, c, y, x) = hr.at(b, c, y * s, x * s);
        }
  return out;
}

// Pixel replication: each source pixel becomes an s x s block.
template <typename S>
Tensor<S> nn_upsample(const Tensor<S>& lr, int s) {
  if (s < 1) fail_config("upsample factor must be >= 1, got ", s);
  const Shape in = lr.shape();
  Tensor<S> out(Shape{in.n, in.c, in.h * s, in.w * s});
  for (int b = 0; b < in.n; ++b)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < in.h * s; ++y)
        for (int x = 0; x < in.w * s; ++x) {
          out.at(b, c, y, x) = lr.at(b, c, y / s, x / s);
        }
  return out;
}

namespace detail {

// Keys cubic convolution kernel with a = -0.5.
inline double keys_weight(double d) {
  d = std::abs(d);
  if (d <= 1.0) return (1.5 * d - 2.5) * d * d + 1.0;
  if (d < 2.0) return ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0;
  return 0.0;
}

struct CubicTap {
  int idx[4];
  double w[4];
};

// Tap positions and weights for every destination coordinate along one
// axis. Source position is dst/s, aligning sample 0 with sample 0 (the
// same phase the nearest-neighbor model uses); edges clamp.
inline std::vector<CubicTap> cubic_taps(int dst_size, int src_size, int s) {
  std::vector<CubicTap> taps(dst_size);
  for (int d = 0; d < dst_size; ++d) {
    const double src = static_cast<double>(d) / s;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    for (int t = 0; t < 4; ++t) {
      const int raw = base - 1 + t;
      taps[d].idx[t] = std::clamp(raw, 0, src_size - 1);
      taps[d].w[t] = keys_weight(frac - (t - 1));
    }
  }
  return taps;
}

}  // namespace detail

// Separable Keys bicubic (a = -0.5), edge-clamped, output clipped to [0,1].
template <typename S>
Tensor<S> bicubic_upsample(const Tensor<S>& lr, int s) {
  if (s < 1) fail_config("upsample factor must be >= 1, got ", s);
  const Shape in = lr.shape();
  const int oh = in.h * s, ow = in.w * s;
  const std::vector<detail::CubicTap> xtaps = detail::cubic_taps(ow, in.w, s);
  const std::vector<detail::CubicTap> ytaps = detail::cubic_taps(oh, in.h, s);

  Tensor<S> out(Shape{in.n, in.c, oh, ow});
  std::vector<double> rows(static_cast<std::size_t>(in.h) * ow);
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < in.c; ++c) {
      // Horizontal pass at source height, then vertical pass.
      for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < ow; ++x) {
          const detail::CubicTap& t = xtaps[x];
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) acc += t.w[k] * lr.at(b, c, y, t.idx[k]);
          rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
      }
      for (int y = 0; y < oh; ++y) {
        const detail::CubicTap& t = ytaps[y];
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) {
            acc += t.w[k] * rows[static_cast<std::size_t>(t.idx[k]) * ow + x];
          }
          out.at(b, c, y, x) = static_cast<S>(std::clamp(acc, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

template <typename S>
struct Chip {
  int x = 0, y = 0;
  Tensor<S> data;  // (1, C, chip, chip)
};

// Tiles an image into chips at the given stride; right/bottom remainders
// that do not fit a full chip are dropped.
template <typename S>
std::vector<Chip<S>> chip_image(const Tensor<S>& image, int chip_size, int stride) {
  const Shape in = image.shape();
  if (in.n != 1) fail_config("chip_image expects a single image, got batch ", in.n);
  if (chip_size < 1 || chip_size > in.h || chip_size > in.w) {
    fail_config("chip size ", chip_size, " does not fit image ", in.str());
  }
  if (stride < 1) fail_config("chip stride must be >= 1, got ", stride);

  std::vector<Chip<S>> chips;
  for (int y = 0; y + chip_size <= in.h; y += stride) {
    for (int x = 0; x + chip_size <= in.w; x += stride) {
      Chip<S> chip;
      chip.x = x;
      chip.y = y;
      chip.data = Tensor<S>(Shape{1, in.c, chip_size, chip_size});
      for (int c = 0; c < in.c; ++c)
        for (int yy = 0; yy < chip_size; ++yy)
          for (int xx = 0; xx < chip_size; ++xx) {
            chip.data.at(0, c, yy, xx) = image.at(0, c, y + yy, x + xx);
          }
      chips.push_back(std::move(chip));
    }
  }
  return chips;
}

}  // namespace densesr
