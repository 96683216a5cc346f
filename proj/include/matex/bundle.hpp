#pragma once

// On-disk bundle of model intermediates for one (image, text) pair.
//
// Layout of a bundle directory:
//   manifest.json          metadata + one TensorSpec per tensor
//   <name>.bin             raw little-endian f32, row-major, no header
//
// The bundle is the only thing the attribution engine sees of a model, so it
// has to carry everything: per-layer CLS->patch attention (head-averaged),
// patch embeddings, dS/d(patch embeddings), the similarity score and the
// optional text-branch tensors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace matex {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}
  Tensor(std::vector<std::size_t> s, float fill);

  std::size_t element_count() const noexcept;
  std::size_t rank() const noexcept { return shape.size(); }

  // 2D accessors; only valid for rank-2 tensors.
  float at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  float& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct ImageRef {
  std::string path;  // relative paths resolve against the bundle directory
  std::size_t height_px = 0;
  std::size_t width_px = 0;
  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct PatchGrid {
  std::size_t h_patches = 0;
  std::size_t w_patches = 0;
  std::size_t count() const noexcept { return h_patches * w_patches; }
  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

struct IntermediatesBundle {
  int manifest_version = 1;
  std::string model_id;
  ImageRef image;
  std::string text;
  PatchGrid grid;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t channel_dim = 0;
  std::size_t key_dim = 0;
  double score = 0.0;
  bool attn_normalized = true;

  Tensor attn_cls;          // [L, N]
  Tensor patch_embed;       // [N, C]
  Tensor grad_patch_embed;  // [N, C]
  std::optional<Tensor> value_norms;  // [L, N]

  // Text branch: all three present or none.
  std::optional<std::vector<std::string>> tokens;
  std::optional<Tensor> attn_eos_text;     // [L, T]
  std::optional<Tensor> grad_token_embed;  // [T, C_text]

  bool has_text() const noexcept { return tokens && attn_eos_text && grad_token_embed; }

  friend bool operator==(const IntermediatesBundle&, const IntermediatesBundle&) = default;
};

inline constexpr double kAttnRowSumTolerance = 0.05;

IntermediatesBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const IntermediatesBundle& bundle, const std::filesystem::path& dir);

enum class Severity { Warning, Error };

struct Finding {
  Severity severity;
  std::string code;
  std::string message;
};

using ValidationReport = std::vector<Finding>;

// Never throws; an empty report means every bundle invariant holds.
ValidationReport validate_bundle(const IntermediatesBundle& bundle);

bool has_errors(const ValidationReport& report);
const char* to_string(Severity s) noexcept;

// Validation codes.
namespace codes {
inline constexpr const char* kRowSumOutOfRange = "ROW_SUM_OUT_OF_RANGE";
inline constexpr const char* kNegativeAttention = "NEGATIVE_ATTENTION";
inline constexpr const char* kNonFinite = "NON_FINITE";
inline constexpr const char* kGridMismatch = "GRID_MISMATCH";
inline constexpr const char* kShapeMismatch = "SHAPE_MISMATCH";
inline constexpr const char* kBadShape = "BAD_SHAPE";
inline constexpr const char* kTextPartial = "TEXT_TENSORS_PARTIAL";
inline constexpr const char* kTokenCount = "TOKEN_COUNT_MISMATCH";
}  // namespace codes

}  // namespace matex
