#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace matex {

// Dense row-major 2D array of doubles. Used for every patch- and pixel-level map.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Grid(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::size_t size() const noexcept { return values.size(); }
  bool same_shape(const Grid& other) const noexcept {
    return rows == other.rows && cols == other.cols;
  }

  std::span<double> span() noexcept { return values; }
  std::span<const double> span() const noexcept { return values; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace matex
