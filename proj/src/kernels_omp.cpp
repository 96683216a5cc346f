#include "matex/kernels.hpp"

#include <cstddef>

#include <omp.h>

#include "kernel_cells.hpp"

namespace matex::kernels::omp {

void weighted_layer_sum(std::span<const float> rows, std::span<const double> weights, std::size_t n,
                        std::span<double> out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    out[i] = cell::weighted_layer_sum(rows, weights, n, static_cast<std::size_t>(i));
}

void layer_std(std::span<const float> rows, std::size_t layers, std::size_t n, std::span<double> out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    out[i] = cell::layer_std(rows, layers, n, static_cast<std::size_t>(i));
}

void grad_times_activation(std::span<const float> grad, std::span<const float> act, std::size_t n,
                           std::size_t channels, std::span<double> out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    out[i] = cell::grad_times_activation(grad, act, channels, static_cast<std::size_t>(i));
}

void abs_row_sum(std::span<const float> grad, std::size_t n, std::size_t channels, std::span<double> out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    out[i] = cell::abs_row_sum(grad, channels, static_cast<std::size_t>(i));
}

void accumulate_region_tent(double x_min, double x_max, double y_min, double y_max, std::size_t rows,
                            std::size_t cols, std::span<double> out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(rows);
    const double wy = cell::tent(y, y_min, y_max);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(cols);
      out[static_cast<std::size_t>(r) * cols + c] += cell::tent(x, x_min, x_max) * wy;
    }
  }
}

void fuse(std::span<const double> grad, std::span<const double> flow, std::span<const double> gate,
          std::span<const double> prior, const FusionCoefficients& k, std::span<double> out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(out.size()); ++i)
    out[i] = cell::fuse(grad[i], flow[i], gate[i], prior[i], k);
}

void resize_bilinear(std::span<const double> in, std::size_t in_rows, std::size_t in_cols, std::span<double> out,
                     std::size_t out_rows, std::size_t out_cols) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(out_rows); ++r) {
    std::size_t r0, r1;
    double fr;
    cell::source_coord(static_cast<std::size_t>(r), in_rows, out_rows, r0, r1, fr);
    for (std::size_t c = 0; c < out_cols; ++c) {
      std::size_t c0, c1;
      double fc;
      cell::source_coord(c, in_cols, out_cols, c0, c1, fc);
      out[static_cast<std::size_t>(r) * out_cols + c] = cell::bilinear(in, in_cols, r0, r1, fr, c0, c1, fc);
    }
  }
}

void blend_overlay(std::span<const std::uint8_t> gray, std::span<const double> heat, double alpha,
                   double threshold, std::span<std::uint8_t> rgb_out) {
  #pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(gray.size()); ++i)
    cell::blend_pixel(gray[i], heat[i], alpha, threshold, rgb_out.data() + 3 * i);
}

}  // namespace matex::kernels::omp

namespace matex::kernels {

int thread_count() noexcept { return omp_get_max_threads(); }

}  // namespace matex::kernels
