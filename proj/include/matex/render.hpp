#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "matex/attribution.hpp"
#include "matex/grid.hpp"

namespace matex {

// 8-bit image, 1 (gray) or 3 (RGB) interleaved channels, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image&, const Image&) = default;
};

struct OverlayConfig {
  double alpha = 0.45;
  double threshold = 0.2;  // heat below this is fully transparent
  void validate() const;
};

Image colorize_overlay(const Image& base_gray, const Grid& heat, const OverlayConfig& cfg = {});

// PNG, lossless. Throws Error(Io).
void write_image(const Image& image, const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);
// Reads any PNG and converts it to single-channel gray.
Image read_gray_image(const std::filesystem::path& path);

// <p> fragment; token background opacity equals its score, zero scores stay plain.
std::string token_html(const TokenRelevance& relevance);
void render_tokens(const TokenRelevance& relevance, const std::filesystem::path& path);

}  // namespace matex
