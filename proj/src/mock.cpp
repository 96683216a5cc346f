#include "matex/mock.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "matex/anatomy.hpp"
#include "matex/error.hpp"

namespace matex {

namespace {

constexpr const char* kMockPrefix = "mock-linear/v1";

// Box-Muller over mt19937_64 so the stream is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

double blob(double x, double y, double cx, double cy, double sigma) {
  const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

std::vector<float> softmax_row(const std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += e[i] = std::exp(logits[i] - top);
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / total);
  return out;
}

bool is_stopword(const std::string& t) {
  static const std::vector<std::string> kStop = {"in", "the", "of", "a", "an", "with", "and", "at", "on"};
  return std::find(kStop.begin(), kStop.end(), t) != kStop.end();
}

bool is_anatomical(const std::string& t) {
  for (const auto& e : Lexicon::builtin().entries())
    if (std::find(e.pattern.begin(), e.pattern.end(), t) != e.pattern.end()) return true;
  return false;
}

double dot_row(const Tensor& a, const Tensor& b, std::size_t row) {
  const std::size_t C = a.shape[1];
  double acc = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    acc += static_cast<double>(a.data[row * C + c]) * static_cast<double>(b.data[row * C + c]);
  return acc;
}

}  // namespace

const std::vector<std::string>& mock_reports() {
  static const std::vector<std::string> kReports = {
      "opacity in the right upper lobe",       "left lower lobe consolidation",
      "local consolidation in left mid lung",  "right apex nodule",
      "left base atelectasis",                 "right lower lobe opacity",
      "left upper lobe consolidation",         "right mid lung airspace disease",
      "left apical pneumothorax",              "right base effusion",
      "bilateral lower lobe consolidation",
  };
  return kReports;
}

double MockModel::patch_contribution(std::size_t patch) const { return dot_row(patch_weights, patch_embed, patch); }

double MockModel::token_contribution(std::size_t token) const { return dot_row(token_weights, token_embed, token); }

double MockModel::score(const std::vector<bool>& patch_mask, const std::vector<bool>& token_mask) const {
  double s = 0.0;
  const std::size_t N = patch_embed.shape[0];
  for (std::size_t i = 0; i < N; ++i)
    if (i >= patch_mask.size() || !patch_mask[i]) s += patch_contribution(i);
  for (std::size_t t = 0; t < tokens.size(); ++t)
    if (t >= token_mask.size() || !token_mask[t]) s += token_contribution(t);
  return s;
}

double MockModel::score_at(const Tensor& e) const {
  if (e.shape != patch_embed.shape) throw Error(ErrorCode::DimensionMismatch, "embedding override must be [N, C]");
  double s = 0.0;
  for (std::size_t i = 0; i < e.shape[0]; ++i) s += dot_row(patch_weights, e, i);
  for (std::size_t t = 0; t < tokens.size(); ++t) s += token_contribution(t);
  return s;
}

MockModel make_mock_model(const MockOptions& o) {
  if (o.layers == 0 || o.h_patches == 0 || o.w_patches == 0 || o.channels == 0 || o.patch_px == 0)
    throw Error(ErrorCode::InvalidArgument, "mock dimensions must be >= 1");
  Rng rng(o.seed);
  MockModel m;
  m.options = o;
  const auto& reports = mock_reports();
  m.report = reports[o.seed % reports.size()];

  const std::size_t h = o.h_patches, w = o.w_patches, N = h * w, C = o.channels;
  const auto regions = parse_regions(m.report);
  const auto& target = regions.front();
  const double cx = target.x_min + (0.3 + 0.4 * rng.uniform()) * (target.x_max - target.x_min);
  const double cy = target.y_min + (0.3 + 0.4 * rng.uniform()) * (target.y_max - target.y_min);
  const double dx = 0.1 + 0.8 * rng.uniform();
  const double dy = 0.1 + 0.8 * rng.uniform();

  m.patch_gain.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double x = (static_cast<double>(i % w) + 0.5) / static_cast<double>(w);
    const double y = (static_cast<double>(i / w) + 0.5) / static_cast<double>(h);
    double g = blob(x, y, cx, cy, 0.15) + 0.6 * blob(x, y, dx, dy, 0.15) + 0.03 * rng.normal();
    if (rng.uniform() < 0.15) g -= 0.3 * (0.5 + rng.uniform());  // negative-evidence distractor
    m.patch_gain[i] = g;
  }

  m.patch_embed = Tensor({N, C}, 0.0f);
  m.patch_weights = Tensor({N, C}, 0.0f);
  const double noise = 0.05 / std::sqrt(static_cast<double>(C));
  for (std::size_t i = 0; i < N; ++i) {
    double norm2 = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const float e = static_cast<float>(rng.normal());
      m.patch_embed.data[i * C + c] = e;
      norm2 += static_cast<double>(e) * e;
    }
    for (std::size_t c = 0; c < C; ++c)
      m.patch_weights.data[i * C + c] =
          static_cast<float>(m.patch_gain[i] * m.patch_embed.data[i * C + c] / norm2 + noise * rng.normal());
  }

  if (o.with_text) {
    std::istringstream words(normalize_text(m.report));
    for (std::string t; words >> t;) m.tokens.push_back(t);
    const std::size_t T = m.tokens.size();
    m.token_embed = Tensor({T, C}, 0.0f);
    m.token_weights = Tensor({T, C}, 0.0f);
    for (std::size_t t = 0; t < T; ++t) {
      const double importance = is_anatomical(m.tokens[t]) ? 1.0 : is_stopword(m.tokens[t]) ? -0.2 : 0.5;
      double norm2 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const float x = static_cast<float>(rng.normal());
        m.token_embed.data[t * C + c] = x;
        norm2 += static_cast<double>(x) * x;
      }
      for (std::size_t c = 0; c < C; ++c)
        m.token_weights.data[t * C + c] = static_cast<float>(importance * m.token_embed.data[t * C + c] / norm2);
    }
  }
  return m;
}

IntermediatesBundle mock_bundle(const MockOptions& o) {
  const MockModel m = make_mock_model(o);
  // Separate stream so attention draws do not perturb the model draws.
  Rng rng(o.seed ^ 0x9E3779B97F4A7C15ull);
  const std::size_t L = o.layers, N = o.h_patches * o.w_patches;

  IntermediatesBundle b;
  std::ostringstream id;
  id << kMockPrefix << " seed=" << o.seed << " text=" << (o.with_text ? 1 : 0) << " patch_px=" << o.patch_px;
  b.model_id = id.str();
  b.image = {"image.png", o.h_patches * o.patch_px, o.w_patches * o.patch_px};
  b.text = m.report;
  b.grid = {o.h_patches, o.w_patches};
  b.n_layers = L;
  b.n_heads = 1;
  b.channel_dim = o.channels;
  b.key_dim = o.channels;
  b.score = m.score();
  b.attn_normalized = true;

  b.attn_cls = Tensor({L, N}, 0.0f);
  b.value_norms = Tensor({L, N}, 0.0f);
  for (std::size_t l = 0; l < L; ++l) {
    const double sharpness = 4.0 * static_cast<double>(l + 1) / static_cast<double>(L);
    std::vector<double> logits(N);
    for (std::size_t i = 0; i < N; ++i) logits[i] = sharpness * m.patch_gain[i] + 0.6 * rng.normal();
    const auto row = softmax_row(logits);
    std::copy(row.begin(), row.end(), b.attn_cls.data.begin() + static_cast<std::ptrdiff_t>(l * N));
    for (std::size_t i = 0; i < N; ++i) b.value_norms->data[l * N + i] = static_cast<float>(0.5 + rng.uniform());
  }
  b.patch_embed = m.patch_embed;
  b.grad_patch_embed = m.patch_weights;

  if (o.with_text) {
    const std::size_t T = m.tokens.size();
    b.tokens = m.tokens;
    b.attn_eos_text = Tensor({L, T}, 0.0f);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> logits(T);
      for (std::size_t t = 0; t < T; ++t)
        logits[t] = 2.0 * std::abs(m.token_contribution(t)) + 0.3 * rng.normal();
      const auto row = softmax_row(logits);
      std::copy(row.begin(), row.end(), b.attn_eos_text->data.begin() + static_cast<std::ptrdiff_t>(l * T));
    }
    b.grad_token_embed = m.token_weights;
  }
  return b;
}

IntermediatesBundle mock_bundle(std::uint64_t seed, std::size_t layers, std::size_t h, std::size_t w,
                                std::size_t channels) {
  MockOptions o;
  o.seed = seed;
  o.layers = layers;
  o.h_patches = h;
  o.w_patches = w;
  o.channels = channels;
  return mock_bundle(o);
}

bool is_mock_bundle(const IntermediatesBundle& b) { return b.model_id.rfind(kMockPrefix, 0) == 0; }

MockOptions mock_options_from_bundle(const IntermediatesBundle& b) {
  if (!is_mock_bundle(b)) throw Error(ErrorCode::InvalidArgument, "not a mock bundle: " + b.model_id);
  MockOptions o;
  o.layers = b.n_layers;
  o.h_patches = b.grid.h_patches;
  o.w_patches = b.grid.w_patches;
  o.channels = b.channel_dim;
  std::istringstream in(b.model_id.substr(std::string(kMockPrefix).size()));
  for (std::string kv; in >> kv;) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    try {
      if (key == "seed") o.seed = std::stoull(value);
      else if (key == "text") o.with_text = value == "1";
      else if (key == "patch_px") o.patch_px = std::stoull(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "malformed mock model id: " + b.model_id);
    }
  }
  return o;
}

std::vector<std::uint8_t> mock_radiograph(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed + 17);
  std::vector<std::uint8_t> px(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
      // Two dark lung fields over a brighter mediastinum and body outline.
      const double lungs = blob(x, y, 0.3, 0.5, 0.16) + blob(x, y, 0.7, 0.5, 0.16);
      const double body = blob(x, y, 0.5, 0.55, 0.35);
      double v = 40.0 + 170.0 * body - 110.0 * lungs + 6.0 * rng.normal();
      px[r * width + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return px;
}

}  // namespace matex
