#pragma once

// Patch-level attribution maps and their fusion.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "matex/anatomy.hpp"
#include "matex/bundle.hpp"
#include "matex/grid.hpp"
#include "matex/prior.hpp"

namespace matex {

enum class MapKind { Grad, Flow, Consistency, Fused, PriorModulated, External };
enum class Resolution { Patch, Pixel };

const char* to_string(MapKind k) noexcept;

struct AttributionMap {
  Grid grid;
  MapKind kind = MapKind::Fused;
  Resolution resolution = Resolution::Patch;
};

struct FusionWeights {
  double alpha = 0.5;   // gradient saliency
  double beta = 0.2;    // attention flow
  double gamma = 0.35;  // consistency-gated gradient (lambda_c)
  double delta = 0.2;   // prior-modulated gradient
  double tau = 0.5;     // layer temperature
  bool free_weights = false;

  // Throws Error(InvalidArgument) on negative weights, or when alpha + beta + delta
  // differs from 0.9 by more than 1e-9 without free_weights.
  void validate() const;
};

inline constexpr double kFixedWeightSum = 0.9;

struct TokenRelevance {
  std::vector<std::string> tokens;
  std::vector<double> scores;
};

// Softmax over layer index: w_l = exp(tau*l) / sum_k exp(tau*k), l = 1..L.
std::vector<double> layer_weights(std::size_t layers, double tau);

// (z - min) / (max - min); constant input maps to all zeros.
Grid minmax_normalize(const Grid& grid);
std::vector<double> minmax_normalize(const std::vector<double>& values);

AttributionMap attention_flow(const IntermediatesBundle& bundle, double tau, bool use_value_weighting = false);

// C_i = 1 / (1 + sigma_i), sigma = population std across layers. Not normalized.
AttributionMap consistency_map(const IntermediatesBundle& bundle);

// max(0, <grad_i, embed_i>) per patch, min-max normalized.
AttributionMap gradient_attribution(const IntermediatesBundle& bundle);

AttributionMap fuse(const AttributionMap& a_grad, const AttributionMap& a_flow, const AttributionMap& c_map,
                    const SpatialPriorMap& prior, const FusionWeights& w);

TokenRelevance token_relevance(const IntermediatesBundle& bundle, double tau);

// Bilinear, half-pixel centers. Target must be at least the source size.
Grid upsample_bilinear(const Grid& grid, std::size_t target_h, std::size_t target_w);

// General bilinear resize (down- or up-sampling) used for external maps.
Grid resize_bilinear(const Grid& grid, std::size_t target_h, std::size_t target_w);

struct ExplainOptions {
  FusionWeights weights;
  double lambda_s = 2.5;
  bool value_weighting = false;
  const Lexicon* lexicon = nullptr;  // builtin when null
};

struct Explanation {
  AttributionMap fused_pixel;   // final map at image resolution
  AttributionMap fused_patch;
  AttributionMap grad;
  AttributionMap flow;
  AttributionMap consistency;
  SpatialPriorMap prior;
  std::vector<AnatomicalRegion> regions;
  std::optional<TokenRelevance> tokens;
};

Explanation explain(const IntermediatesBundle& bundle, const std::string& report_text, const ExplainOptions& opts);

}  // namespace matex
