#include "matex/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <optional>

#include <png.h>

#include "matex/error.hpp"
#include "matex/fsutil.hpp"
#include "matex/kernels.hpp"

namespace matex {

namespace fs = std::filesystem;

void OverlayConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "overlay alpha must be in [0, 1]");
  if (!(threshold >= 0.0 && threshold < 1.0))
    throw Error(ErrorCode::InvalidArgument, "overlay threshold must be in [0, 1)");
}

Image colorize_overlay(const Image& base, const Grid& heat, const OverlayConfig& cfg) {
  cfg.validate();
  if (base.channels != 1) throw Error(ErrorCode::DimensionMismatch, "overlay base must be grayscale");
  if (base.height != heat.rows || base.width != heat.cols)
    throw Error(ErrorCode::DimensionMismatch, "heat map and base image sizes differ");
  Image out{base.width, base.height, 3, std::vector<std::uint8_t>(base.pixels.size() * 3)};
  kernels::omp::blend_overlay(base.pixels, heat.values, cfg.alpha, cfg.threshold, out.pixels);
  return out;
}

namespace {

std::uint32_t png_format(std::size_t channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw Error(ErrorCode::InvalidArgument, "unsupported channel count " + std::to_string(channels));
  }
}

Image read_png(const fs::path& path, std::optional<std::uint32_t> forced_format) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw Error(ErrorCode::Io, path.string() + ": " + img.message);
  if (forced_format) {
    img.format = *forced_format;
  } else {
    // Keep gray/RGB/RGBA as stored; anything else (palette, gray+alpha) becomes RGB.
    const bool alpha = img.format & PNG_FORMAT_FLAG_ALPHA;
    const bool color = img.format & PNG_FORMAT_FLAG_COLOR;
    img.format = !color && !alpha ? PNG_FORMAT_GRAY : alpha && color ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  }
  Image out;
  out.width = img.width;
  out.height = img.height;
  out.channels = PNG_IMAGE_SAMPLE_CHANNELS(img.format);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::Io, path.string() + ": " + img.message);
  }
  return out;
}

}  // namespace

void write_image(const Image& image, const fs::path& path) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * image.channels)
    throw Error(ErrorCode::InvalidArgument, "image buffer does not match its dimensions");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = png_format(image.channels);

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
    throw Error(ErrorCode::Io, std::string("png encode failed: ") + img.message);
  std::string buffer(size, '\0');
  if (!png_image_write_to_memory(&img, buffer.data(), &size, 0, image.pixels.data(), 0, nullptr))
    throw Error(ErrorCode::Io, std::string("png encode failed: ") + img.message);
  buffer.resize(size);
  write_file_atomic(path, buffer);
}

Image read_image(const fs::path& path) { return read_png(path, std::nullopt); }

Image read_gray_image(const fs::path& path) { return read_png(path, PNG_FORMAT_GRAY); }

std::string token_html(const TokenRelevance& rel) {
  if (rel.tokens.size() != rel.scores.size())
    throw Error(ErrorCode::DimensionMismatch, "token and score counts differ");
  std::string out = "<p class=\"matex-tokens\">";
  char buf[96];
  for (std::size_t t = 0; t < rel.tokens.size(); ++t) {
    if (t) out += ' ';
    std::string escaped;
    for (char c : rel.tokens[t]) {
      switch (c) {
        case '<': escaped += "&lt;"; break;
        case '>': escaped += "&gt;"; break;
        case '&': escaped += "&amp;"; break;
        case '"': escaped += "&quot;"; break;
        default: escaped += c;
      }
    }
    const double s = std::clamp(rel.scores[t], 0.0, 1.0);
    if (s > 0.0) {
      std::snprintf(buf, sizeof buf, "<span style=\"background-color: rgba(255, 0, 0, %.3f)\">", s);
      out += buf + escaped + "</span>";
    } else {
      out += escaped;
    }
  }
  out += "</p>\n";
  return out;
}

void render_tokens(const TokenRelevance& rel, const fs::path& path) { write_file_atomic(path, token_html(rel)); }

}  // namespace matex
