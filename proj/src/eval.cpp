#include "matex/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "matex/error.hpp"
#include "matex/fsutil.hpp"

namespace matex {

namespace fs = std::filesystem;
using nlohmann::json;

void GroundTruthBox::validate() const {
  const bool ok = std::isfinite(x) && std::isfinite(y) && w > 0 && h > 0 && x >= 0 && y >= 0 && x + w <= 1.0 + 1e-12 &&
                  y + h <= 1.0 + 1e-12;
  if (!ok) throw Error(ErrorCode::InvalidArgument, "ground-truth box must lie in the unit square with w, h > 0");
}

std::size_t mask_count(std::size_t n, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::InvalidArgument, "mask fraction must be in [0, 1]");
  // The epsilon keeps fraction = k/n from rounding up to k+1.
  const double k = std::ceil(fraction * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

std::vector<bool> mask_values(const std::vector<double>& values, double fraction, MaskMode mode) {
  const std::size_t count = mask_count(values.size(), fraction);
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (mode == MaskMode::Top)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  else
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<bool> mask(values.size(), false);
  for (std::size_t k = 0; k < count; ++k) mask[order[k]] = true;
  return mask;
}

std::vector<bool> mask_patches(const Grid& attribution, double fraction, MaskMode mode) {
  return mask_values(attribution.values, fraction, mode);
}

std::vector<bool> random_mask(std::size_t n, double fraction, std::uint64_t seed) {
  const std::size_t count = mask_count(n, fraction);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 engine(seed);
  for (std::size_t k = 0; k < count; ++k) std::swap(idx[k], idx[k + engine() % (n - k)]);
  std::vector<bool> mask(n, false);
  for (std::size_t k = 0; k < count; ++k) mask[idx[k]] = true;
  return mask;
}

std::vector<std::size_t> mask_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

namespace {

double relative_change(double from, double to) { return (to - from) / std::max(std::abs(from), 1e-8); }

double masked_patch_score(ScoreOracle& oracle, const EvalTarget& target, const std::vector<bool>& mask) {
  OracleRequest req;
  req.bundle_dir = target.bundle_dir;
  req.patch_mask = mask_indices(mask);
  req.fill = oracle.preferred_fill();
  return oracle.score(req);
}

double masked_token_score(ScoreOracle& oracle, const EvalTarget& target, const std::vector<bool>& mask) {
  OracleRequest req;
  req.bundle_dir = target.bundle_dir;
  req.token_mask = mask_indices(mask);
  req.fill = oracle.preferred_fill();
  return oracle.score(req);
}

bool any(const std::vector<bool>& mask) { return std::find(mask.begin(), mask.end(), true) != mask.end(); }

}  // namespace

double confidence_drop_for_mask(ScoreOracle& oracle, const EvalTarget& target, const std::vector<bool>& mask) {
  if (!any(mask)) return 0.0;
  const double s = target.bundle.score;
  return 100.0 * std::max(0.0, -relative_change(s, masked_patch_score(oracle, target, mask)));
}

double confidence_increase_for_mask(ScoreOracle& oracle, const EvalTarget& target, const std::vector<bool>& mask) {
  if (!any(mask)) return 0.0;
  const double s = target.bundle.score;
  return 100.0 * std::max(0.0, relative_change(s, masked_patch_score(oracle, target, mask)));
}

double confidence_drop(ScoreOracle& oracle, const EvalTarget& target, const Grid& attribution, double fraction) {
  return confidence_drop_for_mask(oracle, target, mask_patches(attribution, fraction, MaskMode::Top));
}

double confidence_increase(ScoreOracle& oracle, const EvalTarget& target, const Grid& attribution, double fraction) {
  return confidence_increase_for_mask(oracle, target, mask_patches(attribution, fraction, MaskMode::Bottom));
}

TokenConfidence token_confidence_metrics(ScoreOracle& oracle, const EvalTarget& target, const TokenRelevance& rel,
                                         double fraction) {
  if (!target.bundle.has_text()) throw Error(ErrorCode::TextTensorsMissing, "bundle has no text-branch tensors");
  if (!oracle.supports_tokens()) throw Error(ErrorCode::OracleFailure, "oracle does not support token masks");
  const double s = target.bundle.score;
  TokenConfidence out;
  const auto top = mask_values(rel.scores, fraction, MaskMode::Top);
  const auto bottom = mask_values(rel.scores, fraction, MaskMode::Bottom);
  if (any(top)) out.drop = 100.0 * std::max(0.0, -relative_change(s, masked_token_score(oracle, target, top)));
  if (any(bottom)) out.incr = 100.0 * std::max(0.0, relative_change(s, masked_token_score(oracle, target, bottom)));
  return out;
}

namespace {

bool pixel_in_boxes(const Grid& g, std::size_t r, std::size_t c, const std::vector<GroundTruthBox>& boxes) {
  const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(g.cols);
  const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(g.rows);
  return std::any_of(boxes.begin(), boxes.end(), [&](const GroundTruthBox& b) { return b.contains(x, y); });
}

void require_boxes(const std::vector<GroundTruthBox>& boxes) {
  if (boxes.empty()) throw Error(ErrorCode::NoGroundTruth, "at least one ground-truth box is required");
  for (const auto& b : boxes) b.validate();
}

}  // namespace

bool pointing_game(const Grid& attribution, const std::vector<GroundTruthBox>& boxes) {
  require_boxes(boxes);
  if (attribution.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty attribution map");
  const auto best = static_cast<std::size_t>(
      std::max_element(attribution.values.begin(), attribution.values.end()) - attribution.values.begin());
  return pixel_in_boxes(attribution, best / attribution.cols, best % attribution.cols, boxes);
}

double mass_in_box(const Grid& attribution, const std::vector<GroundTruthBox>& boxes) {
  require_boxes(boxes);
  double inside = 0.0, total = 0.0;
  for (std::size_t r = 0; r < attribution.rows; ++r)
    for (std::size_t c = 0; c < attribution.cols; ++c) {
      const double v = attribution(r, c);
      total += v;
      if (pixel_in_boxes(attribution, r, c, boxes)) inside += v;
    }
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroMass, "attribution map has no mass");
  return inside / total;
}

GroundTruthBox box_from_region(const AnatomicalRegion& r) {
  return {r.x_min, r.y_min, r.x_max - r.x_min, r.y_max - r.y_min};
}

Grid pool_to_grid(const Grid& pixels, std::size_t rows, std::size_t cols) {
  if (pixels.rows < rows || pixels.cols < cols) return resize_bilinear(pixels, rows, cols);
  Grid sum(rows, cols, 0.0), count(rows, cols, 0.0);
  for (std::size_t r = 0; r < pixels.rows; ++r) {
    const auto pr = static_cast<std::size_t>((static_cast<double>(r) + 0.5) / static_cast<double>(pixels.rows) * rows);
    for (std::size_t c = 0; c < pixels.cols; ++c) {
      const auto pc = static_cast<std::size_t>((static_cast<double>(c) + 0.5) / static_cast<double>(pixels.cols) * cols);
      sum(pr, pc) += pixels(r, c);
      count(pr, pc) += 1.0;
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum.values[i] /= count.values[i];
  return sum;
}

json map_to_json(const Grid& grid) { return json{{"h", grid.rows}, {"w", grid.cols}, {"grid", grid.values}}; }

Grid load_map_file(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
    Grid g(j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>(), j.at("grid").get<std::vector<double>>());
    if (g.rows == 0 || g.cols == 0 || g.values.size() != g.rows * g.cols)
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": grid length does not match h*w");
    for (double v : g.values)
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteTensor, path.string());
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, path.string() + ": " + e.what());
  }
}

// ---- dataset run ------------------------------------------------------------

namespace {

struct SampleSpec {
  std::string id;
  fs::path bundle_dir;
  std::optional<std::string> report;
  std::vector<GroundTruthBox> boxes;
  std::map<std::string, fs::path> external_maps;
};

std::vector<SampleSpec> read_dataset(const fs::path& manifest) {
  json j;
  try {
    j = json::parse(read_file(manifest));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadManifest, manifest.string() + ": " + e.what());
  }
  const fs::path base = manifest.parent_path();
  std::vector<SampleSpec> samples;
  try {
    for (const auto& s : j.at("samples")) {
      SampleSpec spec;
      spec.id = s.at("id").get<std::string>();
      spec.bundle_dir = base / s.at("bundle").get<std::string>();
      if (s.contains("report")) spec.report = s.at("report").get<std::string>();
      // Named locals: items() of a temporary would dangle.
      const json boxes = s.value("boxes", json::array());
      for (const auto& b : boxes)
        spec.boxes.push_back({b.at("x").get<double>(), b.at("y").get<double>(), b.at("w").get<double>(),
                              b.at("h").get<double>()});
      const json maps = s.value("external_maps", json::object());
      if (!maps.is_object()) throw Error(ErrorCode::BadManifest, spec.id + ": external_maps must be an object");
      for (const auto& [name, p] : maps.items()) spec.external_maps[name] = base / p.get<std::string>();
      samples.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, manifest.string() + ": " + e.what());
  }
  if (samples.empty()) throw Error(ErrorCode::BadManifest, manifest.string() + ": no samples");
  return samples;
}

struct SampleOutcome {
  std::vector<SampleRecord> records;
  std::vector<FailureRecord> failures;
};

SampleOutcome evaluate_sample(const SampleSpec& spec, const EvalConfig& cfg, ScoreOracle* shared_oracle) {
  SampleOutcome out;
  IntermediatesBundle bundle;
  std::unique_ptr<ScoreOracle> own_oracle;
  Explanation ex;
  try {
    for (const auto& b : spec.boxes) b.validate();
    bundle = load_bundle(spec.bundle_dir);
    ExplainOptions opts;
    opts.weights = cfg.weights;
    opts.lambda_s = cfg.lambda_s;
    opts.value_weighting = cfg.value_weighting;
    opts.lexicon = cfg.lexicon;
    ex = explain(bundle, spec.report.value_or(bundle.text), opts);
    if (!shared_oracle) {
      if (!is_mock_bundle(bundle))
        throw Error(ErrorCode::OracleFailure, "no oracle command given and bundle is not a mock bundle");
      own_oracle = mock_oracle(bundle);
    }
  } catch (const std::exception& e) {
    out.failures.push_back({spec.id, "*", e.what()});
    return out;
  }
  ScoreOracle& oracle = shared_oracle ? *shared_oracle : *own_oracle;
  const EvalTarget target{bundle, spec.bundle_dir.string()};
  const std::size_t gh = bundle.grid.h_patches, gw = bundle.grid.w_patches;
  const std::size_t H = ex.fused_pixel.grid.rows, W = ex.fused_pixel.grid.cols;

  for (const auto& method : cfg.methods) {
    try {
      Grid patch, pixel;
      if (method == "matex") {
        patch = ex.fused_patch.grid;
        pixel = ex.fused_pixel.grid;
      } else if (method == "grad" || method == "flow") {
        patch = method == "grad" ? ex.grad.grid : ex.flow.grid;
        pixel = resize_bilinear(patch, H, W);
      } else {
        const auto it = spec.external_maps.find(method);
        if (it == spec.external_maps.end())
          throw Error(ErrorCode::InvalidArgument, "no external map for method '" + method + "'");
        const Grid raw = minmax_normalize(load_map_file(it->second));
        if (raw.rows == gh && raw.cols == gw) {
          patch = raw;
          pixel = resize_bilinear(raw, H, W);
        } else if (raw.rows == H && raw.cols == W) {
          pixel = raw;
          patch = pool_to_grid(raw, gh, gw);
        } else {
          throw Error(ErrorCode::DimensionMismatch, "external map '" + method + "' is neither patch- nor image-sized");
        }
      }

      SampleRecord rec;
      rec.sample_id = spec.id;
      rec.method = method;
      rec.conf_drop_pct = confidence_drop(oracle, target, patch, cfg.fraction);
      rec.conf_incr_pct = confidence_increase(oracle, target, patch, cfg.fraction);
      if (!spec.boxes.empty()) {
        rec.pointing_hit = pointing_game(pixel, spec.boxes);
        try {
          rec.mass_in_box = mass_in_box(pixel, spec.boxes);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::ZeroMass) throw;
        }
      }
      if (method == "matex" && ex.tokens && oracle.supports_tokens()) {
        const auto tc = token_confidence_metrics(oracle, target, *ex.tokens, cfg.fraction);
        rec.text_conf_drop_pct = tc.drop;
        rec.text_conf_incr_pct = tc.incr;
      }
      out.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      out.failures.push_back({spec.id, method, e.what()});
    }
  }
  return out;
}

MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  s.n = v.size();
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = std::clamp(sum / static_cast<double>(v.size()), s.min, s.max);
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

}  // namespace

EvalReport run_eval(const fs::path& dataset_manifest, const EvalConfig& cfg) {
  cfg.weights.validate();
  if (!(cfg.lambda_s >= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda_s must be >= 1");
  mask_count(1, cfg.fraction);
  if (cfg.jobs < 1) throw Error(ErrorCode::InvalidArgument, "jobs must be >= 1");
  if (cfg.methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods selected");

  const auto samples = read_dataset(dataset_manifest);
  std::unique_ptr<ScoreOracle> shared;
  if (cfg.oracle_cmd) shared = std::make_unique<SubprocessOracle>(*cfg.oracle_cmd);

  std::vector<SampleOutcome> outcomes(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for num_threads(cfg.jobs) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) outcomes[i] = evaluate_sample(samples[i], cfg, shared.get());

  EvalReport report;
  for (auto& o : outcomes) {
    for (auto& r : o.records) report.records.push_back(std::move(r));
    for (auto& f : o.failures) report.failures.push_back(std::move(f));
  }

  for (const auto& method : cfg.methods) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : report.records) {
      if (r.method != method) continue;
      values["conf_drop_pct"].push_back(r.conf_drop_pct);
      values["conf_incr_pct"].push_back(r.conf_incr_pct);
      if (r.pointing_hit) values["pointing_hit"].push_back(*r.pointing_hit ? 1.0 : 0.0);
      if (r.mass_in_box) values["mass_in_box"].push_back(*r.mass_in_box);
      if (r.text_conf_drop_pct) values["text_conf_drop_pct"].push_back(*r.text_conf_drop_pct);
      if (r.text_conf_incr_pct) values["text_conf_incr_pct"].push_back(*r.text_conf_incr_pct);
    }
    for (const auto& [metric, v] : values) report.aggregates[method][metric] = summarize(v);
  }

  const FusionWeights& w = cfg.weights;
  report.metadata = {
      {"n_samples", samples.size()},
      {"methods", cfg.methods},
      {"mask_fraction", cfg.fraction},
      {"lambda_s", cfg.lambda_s},
      {"weights", {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"delta", w.delta}, {"tau", w.tau}}},
      {"value_weighting", cfg.value_weighting},
      {"oracle", shared ? "subprocess" : "mock"},
      {"mask_fill", shared ? to_string(shared->preferred_fill()) : "zero-embedding"},
      {"std_convention", "population std over per-sample values"},
      {"roar_plus", nullptr},
      {"roar_plus_note", "not computed: requires retraining the model after masking"},
  };
  return report;
}

json to_json(const EvalReport& report) {
  auto opt = [](const auto& v) -> json { return v ? json(*v) : json(nullptr); };
  json records = json::array();
  for (const auto& r : report.records)
    records.push_back({{"sample_id", r.sample_id},
                       {"method", r.method},
                       {"conf_drop_pct", r.conf_drop_pct},
                       {"conf_incr_pct", r.conf_incr_pct},
                       {"pointing_hit", opt(r.pointing_hit)},
                       {"mass_in_box", opt(r.mass_in_box)},
                       {"text_conf_drop_pct", opt(r.text_conf_drop_pct)},
                       {"text_conf_incr_pct", opt(r.text_conf_incr_pct)}});
  json failures = json::array();
  for (const auto& f : report.failures)
    failures.push_back({{"sample_id", f.sample_id}, {"method", f.method}, {"error", f.error}});
  json aggregates = json::object();
  for (const auto& [method, metrics] : report.aggregates)
    for (const auto& [metric, s] : metrics)
      aggregates[method][metric] = {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}, {"n", s.n}};
  return {{"records", records}, {"failures", failures}, {"aggregates", aggregates}, {"metadata", report.metadata}};
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "sample_id,method,conf_drop_pct,conf_incr_pct,pointing_hit,mass_in_box\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& r : report.records) {
    out << quote(r.sample_id) << ',' << quote(r.method) << ',' << num(r.conf_drop_pct) << ',' << num(r.conf_incr_pct)
        << ',' << (r.pointing_hit ? (*r.pointing_hit ? "true" : "false") : "") << ','
        << (r.mass_in_box ? num(*r.mass_in_box) : "") << '\n';
  }
  return out.str();
}

void write_report(const EvalReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw Error(ErrorCode::Io, "cannot create " + out_dir.string());
  write_file_atomic(out_dir / "report.json", to_json(report).dump(2) + "\n");
  write_file_atomic(out_dir / "report.csv", to_csv(report));
}

}  // namespace matex
