#pragma once

// Per-cell bodies shared by the serial and OpenMP kernel drivers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "matex/kernels.hpp"

namespace matex::kernels::cell {

inline double weighted_layer_sum(std::span<const float> rows, std::span<const double> weights, std::size_t n,
                                 std::size_t i) {
  double acc = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) acc += weights[l] * static_cast<double>(rows[l * n + i]);
  return acc;
}

inline double layer_std(std::span<const float> rows, std::size_t layers, std::size_t n, std::size_t i) {
  double mean = 0.0;
  for (std::size_t l = 0; l < layers; ++l) mean += rows[l * n + i];
  mean /= static_cast<double>(layers);
  double var = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    const double d = rows[l * n + i] - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(layers));
}

inline double grad_times_activation(std::span<const float> grad, std::span<const float> act, std::size_t channels,
                                    std::size_t i) {
  double acc = 0.0;
  const std::size_t base = i * channels;
  for (std::size_t c = 0; c < channels; ++c)
    acc += static_cast<double>(grad[base + c]) * static_cast<double>(act[base + c]);
  return std::max(0.0, acc);
}

inline double abs_row_sum(std::span<const float> grad, std::size_t channels, std::size_t i) {
  double acc = 0.0;
  for (std::size_t c = 0; c < channels; ++c) acc += std::abs(static_cast<double>(grad[i * channels + c]));
  return acc;
}

// Clamped-linear tent factor for one axis.
inline double tent(double v, double lo, double hi) {
  const double span = hi - lo;
  return std::clamp((v - lo) / span, 0.0, 1.0) * std::clamp((hi - v) / span, 0.0, 1.0);
}

inline double fuse(double grad, double flow, double gate, double prior, const FusionCoefficients& k) {
  return k.grad * grad + k.flow * flow + k.consistency * (gate * grad) + k.prior * (prior * grad);
}

// Source coordinate for output index `o` under half-pixel centers, clamped to the valid range.
inline void source_coord(std::size_t o, std::size_t in_n, std::size_t out_n, std::size_t& i0, std::size_t& i1,
                         double& frac) {
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
  i0 = static_cast<std::size_t>(std::floor(s));
  i1 = std::min(i0 + 1, in_n - 1);
  frac = s - static_cast<double>(i0);
}

inline double bilinear(std::span<const double> in, std::size_t in_cols, std::size_t r0, std::size_t r1, double fr,
                       std::size_t c0, std::size_t c1, double fc) {
  const double top = in[r0 * in_cols + c0] * (1.0 - fc) + in[r0 * in_cols + c1] * fc;
  const double bot = in[r1 * in_cols + c0] * (1.0 - fc) + in[r1 * in_cols + c1] * fc;
  return top * (1.0 - fr) + bot * fr;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

inline void blend_pixel(std::uint8_t gray, double heat, double alpha, double threshold, std::uint8_t* rgb) {
  if (!(heat >= threshold)) {
    rgb[0] = rgb[1] = rgb[2] = gray;
    return;
  }
  const Rgb c = colormap(heat);
  const double base = gray;
  rgb[0] = to_byte((1.0 - alpha) * base + alpha * c.r);
  rgb[1] = to_byte((1.0 - alpha) * base + alpha * c.g);
  rgb[2] = to_byte((1.0 - alpha) * base + alpha * c.b);
}

}  // namespace matex::kernels::cell
