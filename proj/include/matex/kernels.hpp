#pragma once

// Inner loops of the attribution pipeline.
//
// Each kernel exists twice with identical signatures: `serial` is the plain
// reference used by the tests, `omp` splits the outer per-cell loop across
// OpenMP threads. Both call the same per-cell code, so results are
// bit-identical.

#include <cstddef>
#include <cstdint>
#include <span>

namespace matex::kernels {

struct FusionCoefficients {
  double grad, flow, consistency, prior;
};

namespace serial {

// out[i] = sum_l weights[l] * rows[l*n + i]
void weighted_layer_sum(std::span<const float> rows, std::span<const double> weights, std::size_t n,
                        std::span<double> out);
// out[i] = population std of rows[., i] across layers
void layer_std(std::span<const float> rows, std::size_t layers, std::size_t n, std::span<double> out);
// out[i] = max(0, sum_c grad[i,c] * act[i,c])
void grad_times_activation(std::span<const float> grad, std::span<const float> act, std::size_t n,
                           std::size_t channels, std::span<double> out);
// out[i] = sum_c |grad[i,c]|
void abs_row_sum(std::span<const float> grad, std::size_t n, std::size_t channels, std::span<double> out);
// out[r,c] += tent weight of the region evaluated at the cell center
void accumulate_region_tent(double x_min, double x_max, double y_min, double y_max, std::size_t rows,
                            std::size_t cols, std::span<double> out);
void fuse(std::span<const double> grad, std::span<const double> flow, std::span<const double> gate,
          std::span<const double> prior, const FusionCoefficients& k, std::span<double> out);
// Half-pixel-center bilinear resampling.
void resize_bilinear(std::span<const double> in, std::size_t in_rows, std::size_t in_cols,
                     std::span<double> out, std::size_t out_rows, std::size_t out_cols);
// RGB-interleaved out = (1-a)*gray + a*colormap(heat), a = alpha where heat >= threshold else 0.
void blend_overlay(std::span<const std::uint8_t> gray, std::span<const double> heat, double alpha,
                   double threshold, std::span<std::uint8_t> rgb_out);
}  // namespace serial

namespace omp {

// out[i] = sum_l weights[l] * rows[l*n + i]
void weighted_layer_sum(std::span<const float> rows, std::span<const double> weights, std::size_t n,
                        std::span<double> out);
// out[i] = population std of rows[., i] across layers
void layer_std(std::span<const float> rows, std::size_t layers, std::size_t n, std::span<double> out);
// out[i] = max(0, sum_c grad[i,c] * act[i,c])
void grad_times_activation(std::span<const float> grad, std::span<const float> act, std::size_t n,
                           std::size_t channels, std::span<double> out);
// out[i] = sum_c |grad[i,c]|
void abs_row_sum(std::span<const float> grad, std::size_t n, std::size_t channels, std::span<double> out);
// out[r,c] += tent weight of the region evaluated at the cell center
void accumulate_region_tent(double x_min, double x_max, double y_min, double y_max, std::size_t rows,
                            std::size_t cols, std::span<double> out);
void fuse(std::span<const double> grad, std::span<const double> flow, std::span<const double> gate,
          std::span<const double> prior, const FusionCoefficients& k, std::span<double> out);
// Half-pixel-center bilinear resampling.
void resize_bilinear(std::span<const double> in, std::size_t in_rows, std::size_t in_cols,
                     std::span<double> out, std::size_t out_rows, std::size_t out_cols);
// RGB-interleaved out = (1-a)*gray + a*colormap(heat), a = alpha where heat >= threshold else 0.
void blend_overlay(std::span<const std::uint8_t> gray, std::span<const double> heat, double alpha,
                   double threshold, std::span<std::uint8_t> rgb_out);
}  // namespace omp

struct Rgb {
  double r, g, b;
};

// Fixed 5-stop map: blue, cyan, green, yellow, red at 0, 0.25, 0.5, 0.75, 1.
Rgb colormap(double t) noexcept;

int thread_count() noexcept;

}  // namespace matex::kernels
