#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/rng.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

// Parameters for the deterministic synthetic overhead scene: rectangles
// stand in for buildings, full-width bars for roads, small blobs for
// vehicles, all over low-frequency background texture.
struct SceneSpec {
  std::uint64_t seed = 0;
  int size = 256;
  int channels = 3;
  int buildings = 12;
  int building_min = 8, building_max = 40;
  int roads = 3;
  int road_min_width = 3, road_max_width = 7;
  int vehicles = 20;
  int vehicle_min = 2, vehicle_max = 5;
  double background_level = 0.45;
  double background_amplitude = 0.15;
};

namespace detail {

// Paints a filled rectangle rotated by theta around its center. Per-channel
// values allow a slight color cast in RGB scenes.
template <typename S>
void paint_rect(Tensor<S>& img, double cx, double cy, double half_w, double half_h,
                double theta, const std::vector<double>& value) {
  const Shape s = img.shape();
  const double ct = std::cos(theta), st = std::sin(theta);
  const double reach = std::hypot(half_w, half_h);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int x1 = std::min(s.w - 1, static_cast<int>(std::ceil(cx + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int y1 = std::min(s.h - 1, static_cast<int>(std::ceil(cy + reach)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = dx * ct + dy * st;
      const double v = -dx * st + dy * ct;
      if (std::abs(u) <= half_w && std::abs(v) <= half_h) {
        for (int c = 0; c < s.c; ++c) {
          img.at(0, c, y, x) = static_cast<S>(std::clamp(value[c], 0.0, 1.0));
        }
      }
    }
  }
}

template <typename S>
void paint_ellipse(Tensor<S>& img, double cx, double cy, double rx, double ry,
                   const std::vector<double>& value) {
  const Shape s = img.shape();
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(s.w - 1, static_cast<int>(std::ceil(cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(s.h - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double nx = (x - cx) / rx, ny = (y - cy) / ry;
      if (nx * nx + ny * ny <= 1.0) {
        for (int c = 0; c < s.c; ++c) {
          img.at(0, c, y, x) = static_cast<S>(std::clamp(value[c], 0.0, 1.0));
        }
      }
    }
  }
}

// A contrasting paint value: darker or brighter than the background, with
// a small independent cast per channel in RGB.
inline std::vector<double> pick_value(Rng& rng, int channels, double level) {
  const bool bright = rng.uniform() < 0.5;
  const double base = bright ? rng.uniform(level + 0.25, 1.0)
                             : rng.uniform(0.0, std::max(0.05, level - 0.25));
  std::vector<double> value(channels, base);
  for (int c = 0; c < channels; ++c) value[c] = std::clamp(base + rng.uniform(-0.06, 0.06), 0.0, 1.0);
  return value;
}

}  // namespace detail

// Deterministic synthetic scene in [0,1]; identical spec -> bit-identical
// pixels.
template <typename S>
Tensor<S> generate_scene(const SceneSpec& spec) {
  if (spec.size < 16) fail_config("scene size must be >= 16, got ", spec.size);
  if (spec.channels != 1 && spec.channels != 3) {
    fail_config("scene channels must be 1 or 3, got ", spec.channels);
  }
  Rng rng(spec.seed);
  Tensor<S> img(Shape{1, spec.channels, spec.size, spec.size});

  // Low-frequency value noise: a coarse random grid interpolated bilinearly.
  const int cell = 16;
  const int grid = spec.size / cell + 2;
  std::vector<double> coarse(static_cast<std::size_t>(grid) * grid);
  for (double& g : coarse) g = rng.uniform(-1.0, 1.0);
  for (int y = 0; y < spec.size; ++y) {
    for (int x = 0; x < spec.size; ++x) {
      const double gx = static_cast<double>(x) / cell;
      const double gy = static_cast<double>(y) / cell;
      const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
      const double fx = gx - ix, fy = gy - iy;
      const auto g = [&](int yy, int xx) {
        return coarse[static_cast<std::size_t>(yy) * grid + xx];
      };
      const double noise = (1 - fy) * ((1 - fx) * g(iy, ix) + fx * g(iy, ix + 1)) +
                           fy * ((1 - fx) * g(iy + 1, ix) + fx * g(iy + 1, ix + 1));
      const double v =
          std::clamp(spec.background_level + spec.background_amplitude * noise, 0.0, 1.0);
      for (int c = 0; c < spec.channels; ++c) img.at(0, c, y, x) = static_cast<S>(v);
    }
  }

  // Roads: full-length bars at arbitrary angles.
  for (int i = 0; i < spec.roads; ++i) {
    const double cx = rng.uniform(0.0, spec.size);
    const double cy = rng.uniform(0.0, spec.size);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double half_w = spec.size * 1.5;
    const double half_h =
        0.5 * rng.uniform(static_cast<double>(spec.road_min_width), spec.road_max_width);
    detail::paint_rect(img, cx, cy, half_w, half_h, theta,
                       detail::pick_value(rng, spec.channels, spec.background_level));
  }

  // Buildings: axis-aligned or slightly rotated rectangles.
  for (int i = 0; i < spec.buildings; ++i) {
    const double cx = rng.uniform(0.0, spec.size);
    const double cy = rng.uniform(0.0, spec.size);
    const double half_w =
        0.5 * rng.uniform(static_cast<double>(spec.building_min), spec.building_max);
    const double half_h =
        0.5 * rng.uniform(static_cast<double>(spec.building_min), spec.building_max);
    const bool axis_aligned = rng.uniform() < 0.5;
    const double theta = axis_aligned ? 0.0 : rng.uniform(0.0, std::numbers::pi / 2);
    detail::paint_rect(img, cx, cy, half_w, half_h, theta,
                       detail::pick_value(rng, spec.channels, spec.background_level));
  }

  // Vehicles: small bright/dark blobs.
  for (int i = 0; i < spec.vehicles; ++i) {
    const double cx = rng.uniform(0.0, spec.size);
    const double cy = rng.uniform(0.0, spec.size);
    const double rx =
        0.5 * rng.uniform(static_cast<double>(spec.vehicle_min), spec.vehicle_max);
    const double ry =
        0.5 * rng.uniform(static_cast<double>(spec.vehicle_min), spec.vehicle_max);
    detail::paint_ellipse(img, cx, cy, rx, ry,
                          detail::pick_value(rng, spec.channels, spec.background_level));
  }
  return img;
}

}  // namespace densesr
