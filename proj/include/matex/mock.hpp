#pragma once

// Deterministic stand-in for a vision-language model.
//
// The mock score is linear in its inputs:
//   S = sum_{i,c} W[i,c] * E[i,c]  +  sum_{t,c} U[t,c] * X[t,c]
// where E are patch embeddings and X token embeddings (text term only when
// the mock carries text). Gradients are therefore exact: dS/dE = W and
// dS/dX = U, and gradient x activation recovers each patch's contribution.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "matex/bundle.hpp"

namespace matex {

struct MockOptions {
  std::uint64_t seed = 0;
  std::size_t layers = 4;
  std::size_t h_patches = 7;
  std::size_t w_patches = 7;
  std::size_t channels = 16;
  bool with_text = false;
  std::size_t patch_px = 32;  // image side per patch
};

struct MockModel {
  MockOptions options;
  std::string report;
  std::vector<double> patch_gain;  // per-patch target contribution profile
  Tensor patch_weights;            // W [N, C]
  Tensor patch_embed;              // E [N, C]
  std::vector<std::string> tokens;
  Tensor token_weights;            // U [T, C]
  Tensor token_embed;              // X [T, C]

  // Score with the listed patches / tokens zeroed (PAD embedding is zero).
  double score(const std::vector<bool>& patch_mask = {}, const std::vector<bool>& token_mask = {}) const;
  // S evaluated at arbitrary patch embeddings [N, C] (text term unchanged).
  double score_at(const Tensor& patch_embed_override) const;
  double patch_contribution(std::size_t patch) const;
  double token_contribution(std::size_t token) const;
};

MockModel make_mock_model(const MockOptions& options);
IntermediatesBundle mock_bundle(const MockOptions& options);
IntermediatesBundle mock_bundle(std::uint64_t seed, std::size_t layers, std::size_t h, std::size_t w, std::size_t channels);

// Recovers the options a mock bundle was generated with; throws if model_id is not a mock id.
MockOptions mock_options_from_bundle(const IntermediatesBundle& bundle);
bool is_mock_bundle(const IntermediatesBundle& bundle);

// Smooth synthetic grayscale radiograph-like image, row-major 8-bit.
std::vector<std::uint8_t> mock_radiograph(std::size_t height, std::size_t width, std::uint64_t seed);

// Report phrases mock bundles draw from; each names at least one lung zone.
const std::vector<std::string>& mock_reports();

}  // namespace matex
