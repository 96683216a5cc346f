#include "matex/prior.hpp"

#include <string>

#include "matex/attribution.hpp"
#include "matex/error.hpp"
#include "matex/kernels.hpp"

namespace matex {

namespace {

constexpr double kMinRangeWidth = 1e-9;

void check_region(const AnatomicalRegion& r) {
  if (!(r.x_max - r.x_min >= kMinRangeWidth) || !(r.y_max - r.y_min >= kMinRangeWidth))
    throw Error(ErrorCode::DegenerateRange, "region '" + r.label + "' has an empty coordinate range");
}

void check_dims(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw Error(ErrorCode::InvalidArgument, "prior grid dimensions must be >= 1");
}

}  // namespace

Grid region_weight_grid(const AnatomicalRegion& region, std::size_t h, std::size_t w) {
  check_dims(h, w);
  check_region(region);
  Grid g(h, w, 0.0);
  kernels::omp::accumulate_region_tent(region.x_min, region.x_max, region.y_min, region.y_max, h, w, g.span());
  return g;
}

SpatialPriorMap build_prior(const std::vector<AnatomicalRegion>& regions, double lambda_s, std::size_t h,
                            std::size_t w) {
  check_dims(h, w);
  if (!(lambda_s >= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda_s must be >= 1");
  SpatialPriorMap prior{Grid(h, w, 1.0), lambda_s, regions};
  if (regions.empty()) return prior;

  Grid sum(h, w, 0.0);
  for (const auto& r : regions) {
    check_region(r);
    kernels::omp::accumulate_region_tent(r.x_min, r.x_max, r.y_min, r.y_max, h, w, sum.span());
  }
  const Grid normalized = minmax_normalize(sum);
  for (std::size_t i = 0; i < normalized.size(); ++i)
    prior.grid.values[i] = 1.0 + (lambda_s - 1.0) * normalized.values[i];
  return prior;
}

}  // namespace matex
