#include "matex/bundle.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "matex/error.hpp"
#include "matex/fsutil.hpp"

namespace matex {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor::Tensor(std::vector<std::size_t> s, float fill) : shape(std::move(s)) {
  data.assign(element_count(), fill);
}

std::size_t Tensor::element_count() const noexcept {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

static_assert(sizeof(float) == 4);

constexpr const char* kManifestName = "manifest.json";

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
  ss << ']';
  return ss.str();
}

std::string encode_f32(const std::vector<float>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return bytes;
}

std::vector<float> decode_f32(const std::string& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

bool all_finite(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::BadManifest, std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, std::string("bad value for '") + key + "': " + e.what());
  }
}

Tensor read_tensor(const fs::path& dir, const std::string& name, const json& spec,
                   const std::vector<std::size_t>* expected_shape) {
  std::string file;
  std::vector<std::size_t> shape;
  try {
    file = spec.at("file").get<std::string>();
    shape = spec.at("shape").get<std::vector<std::size_t>>();
    if (spec.value("dtype", std::string("f32")) != "f32")
      throw Error(ErrorCode::BadManifest, name + ": only dtype f32 is supported");
    if (spec.value("endianness", std::string("little")) != "little")
      throw Error(ErrorCode::BadManifest, name + ": only little-endian payloads are supported");
    if (spec.value("layout", std::string("row-major")) != "row-major")
      throw Error(ErrorCode::BadManifest, name + ": only row-major layout is supported");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, name + ": " + e.what());
  }
  if (shape.empty()) throw Error(ErrorCode::ShapeMismatch, name + ": rank 0 shape");
  for (auto d : shape)
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, name + ": zero dimension in " + shape_str(shape));
  if (expected_shape && *expected_shape != shape)
    throw Error(ErrorCode::ShapeMismatch, name + ": expected " + shape_str(*expected_shape) +
                                              ", manifest declares " + shape_str(shape));

  const fs::path path = dir / file;
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::MissingTensorFile, name);
  const std::string bytes = read_file(path);

  Tensor t;
  t.shape = shape;
  const std::size_t expected_bytes = t.element_count() * 4;
  if (bytes.size() != expected_bytes)
    throw Error(ErrorCode::ShapeMismatch, name + ": expected " + std::to_string(expected_bytes) +
                                              " bytes, found " + std::to_string(bytes.size()));
  t.data = decode_f32(bytes);
  if (!all_finite(t.data)) throw Error(ErrorCode::NonFiniteTensor, name);
  return t;
}

json tensor_spec(const std::string& name, const Tensor& t) {
  return json{{"file", name + ".bin"},
              {"dtype", "f32"},
              {"shape", t.shape},
              {"layout", "row-major"},
              {"endianness", "little"}};
}

}  // namespace

IntermediatesBundle load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  if (!fs::is_regular_file(manifest_path))
    throw Error(ErrorCode::MissingManifest, manifest_path.string());

  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadManifest, e.what());
  }

  IntermediatesBundle b;
  b.manifest_version = required<int>(m, "manifest_version");
  if (b.manifest_version != 1)
    throw Error(ErrorCode::BadManifest, "unsupported manifest_version " + std::to_string(b.manifest_version));
  b.model_id = required<std::string>(m, "model_id");
  const json image = required<json>(m, "image");
  b.image.path = required<std::string>(image, "path");
  b.image.height_px = required<std::size_t>(image, "height_px");
  b.image.width_px = required<std::size_t>(image, "width_px");
  b.text = required<std::string>(m, "text");
  const json grid = required<json>(m, "grid");
  b.grid.h_patches = required<std::size_t>(grid, "h_patches");
  b.grid.w_patches = required<std::size_t>(grid, "w_patches");
  b.n_layers = required<std::size_t>(m, "n_layers");
  b.n_heads = required<std::size_t>(m, "n_heads");
  b.channel_dim = required<std::size_t>(m, "channel_dim");
  b.key_dim = required<std::size_t>(m, "key_dim");
  b.score = required<double>(m, "score");
  b.attn_normalized = m.value("attn_normalized", true);

  const json tensors = required<json>(m, "tensors");
  const std::size_t L = b.n_layers, N = b.grid.count(), C = b.channel_dim;
  auto spec_of = [&](const char* name) -> const json& {
    if (!tensors.contains(name)) throw Error(ErrorCode::MissingTensorFile, name);
    return tensors.at(name);
  };

  const std::vector<std::size_t> ln{L, N}, nc{N, C};
  b.attn_cls = read_tensor(dir, "attn_cls", spec_of("attn_cls"), &ln);
  b.patch_embed = read_tensor(dir, "patch_embed", spec_of("patch_embed"), &nc);
  b.grad_patch_embed = read_tensor(dir, "grad_patch_embed", spec_of("grad_patch_embed"), &nc);
  if (tensors.contains("value_norms"))
    b.value_norms = read_tensor(dir, "value_norms", tensors.at("value_norms"), &ln);

  if (m.contains("tokens")) {
    try {
      b.tokens = m.at("tokens").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadManifest, std::string("tokens: ") + e.what());
    }
  }
  if (tensors.contains("attn_eos_text")) {
    std::vector<std::size_t> expected;
    const std::vector<std::size_t>* exp = nullptr;
    if (b.tokens) {
      expected = {L, b.tokens->size()};
      exp = &expected;
    }
    b.attn_eos_text = read_tensor(dir, "attn_eos_text", tensors.at("attn_eos_text"), exp);
  }
  if (tensors.contains("grad_token_embed"))
    b.grad_token_embed = read_tensor(dir, "grad_token_embed", tensors.at("grad_token_embed"), nullptr);
  return b;
}

void save_bundle(const IntermediatesBundle& b, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create directory " + dir.string());

  json tensors = json::object();
  auto put = [&](const std::string& name, const Tensor& t) {
    write_file_atomic(dir / (name + ".bin"), encode_f32(t.data));
    tensors[name] = tensor_spec(name, t);
  };
  put("attn_cls", b.attn_cls);
  put("patch_embed", b.patch_embed);
  put("grad_patch_embed", b.grad_patch_embed);
  if (b.value_norms) put("value_norms", *b.value_norms);
  if (b.attn_eos_text) put("attn_eos_text", *b.attn_eos_text);
  if (b.grad_token_embed) put("grad_token_embed", *b.grad_token_embed);

  json m{{"manifest_version", b.manifest_version},
         {"model_id", b.model_id},
         {"image", {{"path", b.image.path}, {"height_px", b.image.height_px}, {"width_px", b.image.width_px}}},
         {"text", b.text},
         {"grid", {{"h_patches", b.grid.h_patches}, {"w_patches", b.grid.w_patches}}},
         {"n_layers", b.n_layers},
         {"n_heads", b.n_heads},
         {"channel_dim", b.channel_dim},
         {"key_dim", b.key_dim},
         {"score", b.score},
         {"attn_normalized", b.attn_normalized},
         {"tensors", tensors}};
  if (b.tokens) m["tokens"] = *b.tokens;
  write_file_atomic(dir / kManifestName, m.dump(2) + "\n");
}

const char* to_string(Severity s) noexcept { return s == Severity::Error ? "error" : "warning"; }

bool has_errors(const ValidationReport& report) {
  for (const auto& f : report)
    if (f.severity == Severity::Error) return true;
  return false;
}

ValidationReport validate_bundle(const IntermediatesBundle& b) {
  ValidationReport report;
  auto add = [&](Severity s, const char* code, std::string msg) {
    report.push_back({s, code, std::move(msg)});
  };

  // Returns false when the tensor is unusable for further checks.
  auto check_tensor = [&](const char* name, const Tensor& t,
                          const std::vector<std::size_t>& expected) -> bool {
    if (t.shape.empty()) {
      add(Severity::Error, codes::kBadShape, std::string(name) + ": rank 0 shape");
      return false;
    }
    for (auto d : t.shape)
      if (d == 0) {
        add(Severity::Error, codes::kBadShape, std::string(name) + ": zero dimension " + shape_str(t.shape));
        return false;
      }
    if (t.data.size() != t.element_count()) {
      add(Severity::Error, codes::kShapeMismatch,
          std::string(name) + ": " + std::to_string(t.data.size()) + " values for shape " + shape_str(t.shape));
      return false;
    }
    bool ok = true;
    if (!expected.empty() && t.shape != expected) {
      add(Severity::Error, codes::kShapeMismatch,
          std::string(name) + ": shape " + shape_str(t.shape) + ", expected " + shape_str(expected));
      ok = false;
    }
    if (!all_finite(t.data)) {
      add(Severity::Error, codes::kNonFinite, std::string(name) + " contains NaN or Inf");
      ok = false;
    }
    return ok;
  };

  const std::size_t L = b.n_layers, N = b.grid.count(), C = b.channel_dim;
  if (L == 0 || N == 0 || C == 0)
    add(Severity::Error, codes::kBadShape, "n_layers, grid and channel_dim must be positive");
  if (b.attn_cls.shape.size() == 2 && b.attn_cls.shape[1] != N)
    add(Severity::Error, codes::kGridMismatch,
        "attn_cls has " + std::to_string(b.attn_cls.shape[1]) + " patches, grid is " +
            std::to_string(b.grid.h_patches) + "x" + std::to_string(b.grid.w_patches));
  if (!std::isfinite(b.score)) add(Severity::Error, codes::kNonFinite, "score is not finite");

  const bool attn_ok = check_tensor("attn_cls", b.attn_cls, {L, N});
  check_tensor("patch_embed", b.patch_embed, {N, C});
  check_tensor("grad_patch_embed", b.grad_patch_embed, {N, C});
  if (b.value_norms) check_tensor("value_norms", *b.value_norms, {L, N});

  if (attn_ok) {
    for (std::size_t l = 0; l < L; ++l) {
      double sum = 0.0;
      bool negative = false;
      for (std::size_t i = 0; i < N; ++i) {
        const float v = b.attn_cls.at(l, i);
        if (v < 0.0f) negative = true;
        sum += v;
      }
      if (negative)
        add(Severity::Error, codes::kNegativeAttention, "attn_cls layer " + std::to_string(l) + " has negative weights");
      if (b.attn_normalized && std::abs(sum - 1.0) > kAttnRowSumTolerance) {
        std::ostringstream ss;
        ss << "attn_cls layer " << l << " sums to " << sum;
        add(Severity::Warning, codes::kRowSumOutOfRange, ss.str());
      }
    }
  }

  const int present = int(b.tokens.has_value()) + int(b.attn_eos_text.has_value()) +
                      int(b.grad_token_embed.has_value());
  if (present != 0 && present != 3)
    add(Severity::Error, codes::kTextPartial, "tokens, attn_eos_text and grad_token_embed must be present together");
  if (b.attn_eos_text) {
    const std::size_t T = b.tokens ? b.tokens->size() : (b.attn_eos_text->rank() == 2 ? b.attn_eos_text->shape[1] : 0);
    if (check_tensor("attn_eos_text", *b.attn_eos_text, {L, T})) {
      for (float v : b.attn_eos_text->data)
        if (v < 0.0f) {
          add(Severity::Error, codes::kNegativeAttention, "attn_eos_text has negative weights");
          break;
        }
    }
  }
  if (b.grad_token_embed && check_tensor("grad_token_embed", *b.grad_token_embed, {}) && b.tokens &&
      b.grad_token_embed->rank() == 2 && b.grad_token_embed->shape[0] != b.tokens->size())
    add(Severity::Error, codes::kTokenCount,
        "grad_token_embed has " + std::to_string(b.grad_token_embed->shape[0]) + " rows for " +
            std::to_string(b.tokens->size()) + " tokens");
  if (b.tokens && b.tokens->empty()) add(Severity::Error, codes::kBadShape, "tokens list is empty");
  return report;
}

}  // namespace matex
