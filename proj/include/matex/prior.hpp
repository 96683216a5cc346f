#pragma once

#include <cstddef>
#include <vector>

#include "matex/anatomy.hpp"
#include "matex/grid.hpp"

namespace matex {

// Multiplicative text-derived prior on the patch grid. Cells are >= 1; the
// peak equals lambda_s whenever at least one region contributes.
struct SpatialPriorMap {
  Grid grid;
  double lambda_s = 1.0;
  std::vector<AnatomicalRegion> regions;
};

// Unnormalized product of the clamped-linear x and y tents of one region,
// sampled at patch centers ((j + 0.5) / w, (i + 0.5) / h).
Grid region_weight_grid(const AnatomicalRegion& region, std::size_t h, std::size_t w);

// M = 1 + (lambda_s - 1) * minmax(sum of region tents); M == 1 for no regions.
SpatialPriorMap build_prior(const std::vector<AnatomicalRegion>& regions, double lambda_s, std::size_t h,
                            std::size_t w);

}  // namespace matex
