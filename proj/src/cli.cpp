#include "matex/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "matex/anatomy.hpp"
#include "matex/attribution.hpp"
#include "matex/bundle.hpp"
#include "matex/error.hpp"
#include "matex/eval.hpp"
#include "matex/fsutil.hpp"
#include "matex/mock.hpp"
#include "matex/prior.hpp"
#include "matex/render.hpp"

namespace matex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GridSize {
  std::size_t h = 7, w = 7;
};

GridSize parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used1 = 0, used2 = 0;
    const std::string a = s.substr(0, x), b = s.substr(x + 1);
    GridSize g{std::stoul(a, &used1), std::stoul(b, &used2)};
    if (used1 != a.size() || used2 != b.size() || g.h == 0 || g.w == 0) throw std::invalid_argument(s);
    return g;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "grid must look like HxW with positive integers, got '" + s + "'");
  }
}

json region_json(const AnatomicalRegion& r) {
  return {{"label", r.label},   {"x_min", r.x_min}, {"x_max", r.x_max},
          {"y_min", r.y_min},   {"y_max", r.y_max}, {"span", {r.span_begin, r.span_end}}};
}

json regions_json(const std::vector<AnatomicalRegion>& regions) {
  json arr = json::array();
  for (const auto& r : regions) arr.push_back(region_json(r));
  return arr;
}

json tokens_json(const TokenRelevance& t) { return {{"tokens", t.tokens}, {"scores", t.scores}}; }

TokenRelevance tokens_from_json(const json& j) {
  TokenRelevance t;
  try {
    t.tokens = j.at("tokens").get<std::vector<std::string>>();
    t.scores = j.at("scores").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, std::string("tokens file: ") + e.what());
  }
  return t;
}

// Lexicon from MATEX_LEXICON when set, else the compiled-in one.
// Read per call: run_cli may be invoked repeatedly in one process.
std::shared_ptr<const Lexicon> active_lexicon() {
  if (const char* p = std::getenv("MATEX_LEXICON"); p && *p)
    return std::make_shared<const Lexicon>(Lexicon::from_file(p));
  return {std::shared_ptr<const Lexicon>{}, &Lexicon::builtin()};
}

// Flags shared by explain and eval.
struct PipelineFlags {
  FusionWeights weights;
  double lambda_s = 2.5;
  bool value_weighting = false;

  void add_to(CLI::App& app) {
    app.add_option("--tau", weights.tau, "Layer temperature")->capture_default_str();
    app.add_option("--lambda-s", lambda_s, "Spatial prior strength (>= 1)")->capture_default_str();
    app.add_option("--lambda-c", weights.gamma, "Consistency weight gamma")->capture_default_str();
    app.add_option("--alpha", weights.alpha, "Gradient weight")->capture_default_str();
    app.add_option("--beta", weights.beta, "Attention-flow weight")->capture_default_str();
    app.add_option("--delta", weights.delta, "Prior-modulated gradient weight")->capture_default_str();
    app.add_flag("--free-weights", weights.free_weights, "Do not require alpha + beta + delta = 0.9");
    app.add_flag("--value-weighting", value_weighting, "Weight attention rows by value-vector norms");
  }

  void validate() const {
    weights.validate();
    if (!(lambda_s >= 1.0)) throw Error(ErrorCode::InvalidArgument, "--lambda-s must be >= 1");
  }
};

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

Image base_image_for(const IntermediatesBundle& b, const fs::path& bundle_dir, std::size_t h, std::size_t w,
                     std::ostream& err) {
  fs::path p = b.image.path;
  if (p.is_relative()) p = bundle_dir / p;
  try {
    Image img = read_gray_image(p);
    if (img.height == h && img.width == w) return img;
    err << "warning: " << p.string() << " is " << img.width << "x" << img.height << ", expected " << w << "x" << h
        << "; using a flat background\n";
  } catch (const Error& e) {
    err << "warning: cannot read base image (" << e.what() << "); using a flat background\n";
  }
  return Image{w, h, 1, std::vector<std::uint8_t>(h * w, 128)};
}

// ---- subcommands -------------------------------------------------------------

struct ParseCmd {
  std::string text;
  int run(std::ostream& out) const {
    out << regions_json(parse_regions(text, *active_lexicon())).dump(2) << "\n";
    return kExitOk;
  }
};

struct PriorCmd {
  std::string text;
  double lambda_s = 2.5;
  std::string grid = "7x7";
  std::string out_path;
  int run(std::ostream& out) const {
    const GridSize g = parse_grid(grid);
    if (!(lambda_s >= 1.0)) throw Error(ErrorCode::InvalidArgument, "--lambda-s must be >= 1");
    const auto regions = parse_regions(text, *active_lexicon());
    const auto prior = build_prior(regions, lambda_s, g.h, g.w);
    json j = map_to_json(prior.grid);
    j["lambda_s"] = lambda_s;
    j["regions"] = regions_json(regions);
    if (out_path.empty()) out << j.dump(2) << "\n";
    else write_json(out_path, j);
    return kExitOk;
  }
};

struct ExplainCmd {
  std::string bundle_dir;
  std::optional<std::string> report;
  PipelineFlags flags;
  std::string out_map, out_png, out_tokens, out_html;
  OverlayConfig overlay;

  int run(std::ostream&, std::ostream& err) const {
    flags.validate();
    overlay.validate();
    const IntermediatesBundle bundle = load_bundle(bundle_dir);
    ExplainOptions opts;
    opts.weights = flags.weights;
    opts.lambda_s = flags.lambda_s;
    opts.value_weighting = flags.value_weighting;
    const auto lexicon = active_lexicon();
    opts.lexicon = lexicon.get();
    const std::string text = report.value_or(bundle.text);
    const Explanation ex = explain(bundle, text, opts);

    if (!out_map.empty()) {
      json j = map_to_json(ex.fused_pixel.grid);
      j["components"] = {{"grad", map_to_json(ex.grad.grid)},
                         {"flow", map_to_json(ex.flow.grid)},
                         {"consistency", map_to_json(ex.consistency.grid)},
                         {"prior", map_to_json(ex.prior.grid)},
                         {"fused_patch", map_to_json(ex.fused_patch.grid)}};
      j["regions"] = regions_json(ex.regions);
      j["report"] = text;
      j["model_id"] = bundle.model_id;
      const auto& w = flags.weights;
      j["params"] = {{"alpha", w.alpha}, {"beta", w.beta},           {"gamma", w.gamma},
                     {"delta", w.delta}, {"tau", w.tau},             {"lambda_s", flags.lambda_s},
                     {"value_weighting", flags.value_weighting}};
      write_json(out_map, j);
    }
    if (!out_png.empty()) {
      const Grid& heat = ex.fused_pixel.grid;
      const Image base = base_image_for(bundle, bundle_dir, heat.rows, heat.cols, err);
      write_image(colorize_overlay(base, heat, overlay), out_png);
    }
    if (!out_tokens.empty() || !out_html.empty()) {
      if (!ex.tokens) {
        err << "warning: bundle has no text tensors; token outputs skipped\n";
      } else {
        if (!out_tokens.empty()) write_json(out_tokens, tokens_json(*ex.tokens));
        if (!out_html.empty()) render_tokens(*ex.tokens, out_html);
      }
    }
    return kExitOk;
  }
};

struct EvalCmd {
  std::string dataset;
  std::string out_dir;
  std::vector<std::string> methods = {"matex", "grad", "flow"};
  double fraction = kDefaultMaskFraction;
  std::optional<std::string> oracle_cmd;
  int jobs = 1;
  PipelineFlags flags;

  int run(std::ostream& out) const {
    flags.validate();
    mask_count(1, fraction);
    if (jobs < 1) throw Error(ErrorCode::InvalidArgument, "--jobs must be >= 1");
    EvalConfig cfg;
    cfg.methods = methods;
    cfg.weights = flags.weights;
    cfg.lambda_s = flags.lambda_s;
    cfg.value_weighting = flags.value_weighting;
    cfg.fraction = fraction;
    cfg.oracle_cmd = oracle_cmd;
    cfg.jobs = jobs;
    const auto lexicon = active_lexicon();
    cfg.lexicon = lexicon.get();
    const EvalReport report = run_eval(dataset, cfg);
    write_report(report, out_dir);
    out << report.records.size() << " records, " << report.failures.size() << " failures -> " << out_dir << "\n";
    return kExitOk;
  }
};

struct ValidateCmd {
  std::string bundle_dir;
  int run(std::ostream& out) const {
    const auto report = validate_bundle(load_bundle(bundle_dir));
    json arr = json::array();
    for (const auto& f : report)
      arr.push_back({{"severity", to_string(f.severity)}, {"code", f.code}, {"message", f.message}});
    out << arr.dump(2) << "\n";
    return has_errors(report) ? kExitValidation : kExitOk;
  }
};

struct RenderCmd {
  std::string map_path, image_path, out_png, tokens_path, out_html;
  OverlayConfig overlay;
  int run(std::ostream&, std::ostream& err) const {
    overlay.validate();
    if (out_png.empty() && out_html.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to render: pass --out and/or --out-html");
    if (!out_png.empty()) {
      if (map_path.empty()) throw Error(ErrorCode::InvalidArgument, "--map is required for --out");
      const Grid heat = load_map_file(map_path);
      Image base;
      if (!image_path.empty()) {
        base = read_gray_image(image_path);
      } else {
        err << "warning: no --image given; using a flat background\n";
        base = Image{heat.cols, heat.rows, 1, std::vector<std::uint8_t>(heat.size(), 128)};
      }
      write_image(colorize_overlay(base, heat, overlay), out_png);
    }
    if (!out_html.empty()) {
      if (tokens_path.empty()) throw Error(ErrorCode::InvalidArgument, "--tokens is required for --out-html");
      render_tokens(tokens_from_json(json::parse(read_file(tokens_path))), out_html);
    }
    return kExitOk;
  }
};

struct MockCmd {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t layers = 4;
  std::string grid = "7x7";
  std::size_t channels = 16;
  std::size_t patch_px = 32;
  bool no_text = false;
  std::size_t samples = 0;

  MockOptions options_for(std::uint64_t s) const {
    const GridSize g = parse_grid(grid);
    MockOptions o;
    o.seed = s;
    o.layers = layers;
    o.h_patches = g.h;
    o.w_patches = g.w;
    o.channels = channels;
    o.patch_px = patch_px;
    o.with_text = !no_text;
    return o;
  }

  static IntermediatesBundle write_one(const MockOptions& o, const fs::path& dir) {
    const IntermediatesBundle b = mock_bundle(o);
    save_bundle(b, dir);
    write_image(Image{b.image.width_px, b.image.height_px, 1,
                      mock_radiograph(b.image.height_px, b.image.width_px, o.seed)},
                dir / b.image.path);
    return b;
  }

  int run(std::ostream& out) const {
    if (layers == 0 || channels == 0 || patch_px == 0)
      throw Error(ErrorCode::InvalidArgument, "--layers, --channels and --patch-px must be >= 1");
    options_for(seed);  // validates --grid before any output
    if (samples == 0) {
      write_one(options_for(seed), out_dir);
      out << "wrote mock bundle (seed " << seed << ") to " << out_dir << "\n";
      return kExitOk;
    }
    json list = json::array();
    for (std::size_t k = 0; k < samples; ++k) {
      const std::string id = "sample_" + std::to_string(k);
      const IntermediatesBundle b = write_one(options_for(seed + k), fs::path(out_dir) / id);
      json boxes = json::array();
      for (const auto& r : parse_regions(b.text)) {
        const auto box = box_from_region(r);
        boxes.push_back({{"x", box.x}, {"y", box.y}, {"w", box.w}, {"h", box.h}});
      }
      list.push_back({{"id", id}, {"bundle", id}, {"report", b.text}, {"boxes", boxes}, {"external_maps", json::object()}});
    }
    write_json(fs::path(out_dir) / "dataset.json", json{{"samples", list}});
    out << "wrote " << samples << " mock samples and dataset.json to " << out_dir << "\n";
    return kExitOk;
  }
};

void add_overlay_flags(CLI::App& app, OverlayConfig& cfg) {
  app.add_option("--overlay-alpha", cfg.alpha, "Heatmap opacity")->capture_default_str();
  app.add_option("--overlay-threshold", cfg.threshold, "Heat below this stays transparent")->capture_default_str();
}

// Turns a JSON config object into flags placed before the explicit ones, so
// explicit flags win (options take the last value given).
std::vector<std::string> config_to_args(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, "config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      args.insert(args.end(), {flag, joined});
    } else if (value.is_string()) {
      args.insert(args.end(), {flag, value.get<std::string>()});
    } else {
      args.insert(args.end(), {flag, value.dump()});
    }
  }
  return args;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale attention and text-guided attribution for vision-language models", "matex"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file of flag defaults (explicit flags take precedence)");

  ParseCmd parse_cmd;
  auto* parse = app.add_subcommand("parse", "Extract anatomical regions from report text");
  parse->add_option("--text", parse_cmd.text, "Report text")->required();

  PriorCmd prior_cmd;
  auto* prior = app.add_subcommand("prior", "Build the spatial prior grid for report text");
  prior->add_option("--text", prior_cmd.text, "Report text")->required();
  prior->add_option("--lambda-s", prior_cmd.lambda_s, "Prior strength (>= 1)")->capture_default_str();
  prior->add_option("--grid", prior_cmd.grid, "Patch grid HxW")->capture_default_str();
  prior->add_option("--out", prior_cmd.out_path, "Output JSON (stdout when omitted)");

  ExplainCmd explain_cmd;
  auto* explain_app = app.add_subcommand("explain", "Compute the fused attribution map for a bundle");
  explain_app->add_option("--bundle", explain_cmd.bundle_dir, "Bundle directory")->required();
  explain_app->add_option("--report", explain_cmd.report, "Report text (defaults to the bundle's text)");
  explain_cmd.flags.add_to(*explain_app);
  explain_app->add_option("--out-map", explain_cmd.out_map, "Pixel map + component grids (JSON)");
  explain_app->add_option("--out-png", explain_cmd.out_png, "Heatmap overlay (PNG)");
  explain_app->add_option("--out-tokens", explain_cmd.out_tokens, "Token relevance (JSON)");
  explain_app->add_option("--out-html", explain_cmd.out_html, "Token highlight fragment (HTML)");
  add_overlay_flags(*explain_app, explain_cmd.overlay);

  EvalCmd eval_cmd;
  auto* eval = app.add_subcommand("eval", "Perturbation and localization metrics over a dataset manifest");
  eval->add_option("--dataset", eval_cmd.dataset, "Dataset manifest JSON")->required();
  eval->add_option("--out", eval_cmd.out_dir, "Report directory")->required();
  eval->add_option("--methods", eval_cmd.methods, "Methods: matex, grad, flow, or external map names")
      ->delimiter(',')
      ->capture_default_str();
  eval->add_option("--fraction", eval_cmd.fraction, "Fraction of patches masked")->capture_default_str();
  eval->add_option("--oracle-cmd", eval_cmd.oracle_cmd, "Score oracle process (mock oracle when omitted)");
  eval->add_option("--jobs", eval_cmd.jobs, "Samples evaluated in parallel")->capture_default_str();
  eval_cmd.flags.add_to(*eval);

  ValidateCmd validate_cmd;
  auto* validate = app.add_subcommand("validate", "Check a bundle against its invariants");
  validate->add_option("--bundle", validate_cmd.bundle_dir, "Bundle directory")->required();

  RenderCmd render_cmd;
  auto* render = app.add_subcommand("render", "Render a map overlay and/or token highlights");
  render->add_option("--map", render_cmd.map_path, "Map JSON ({h, w, grid})");
  render->add_option("--image", render_cmd.image_path, "Grayscale base image (PNG)");
  render->add_option("--out", render_cmd.out_png, "Overlay PNG");
  render->add_option("--tokens", render_cmd.tokens_path, "Token relevance JSON");
  render->add_option("--out-html", render_cmd.out_html, "Token highlight HTML");
  add_overlay_flags(*render, render_cmd.overlay);

  MockCmd mock_cmd;
  auto* mock = app.add_subcommand("mock", "Generate a seeded mock bundle or dataset");
  mock->add_option("--seed", mock_cmd.seed, "Random seed")->capture_default_str();
  mock->add_option("--out", mock_cmd.out_dir, "Output directory")->required();
  mock->add_option("--layers", mock_cmd.layers, "Transformer layers")->capture_default_str();
  mock->add_option("--grid", mock_cmd.grid, "Patch grid HxW")->capture_default_str();
  mock->add_option("--channels", mock_cmd.channels, "Embedding channels")->capture_default_str();
  mock->add_option("--patch-px", mock_cmd.patch_px, "Image pixels per patch side")->capture_default_str();
  mock->add_flag("--no-text", mock_cmd.no_text, "Omit text-branch tensors");
  mock->add_option("--samples", mock_cmd.samples, "Write N bundles plus dataset.json instead of one bundle");

  std::vector<std::string> args = raw_args;
  try {
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] != "--config") continue;
      auto extra = config_to_args(args[i + 1]);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      // Config flags go right after the subcommand name so later explicit flags override them.
      std::size_t at = 0;
      while (at < args.size() && !app.get_subcommand_no_throw(args[at])) ++at;
      if (at < args.size()) args.insert(args.begin() + static_cast<std::ptrdiff_t>(at) + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int rc = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*parse) return parse_cmd.run(out);
    if (*prior) return prior_cmd.run(out);
    if (*explain_app) return explain_cmd.run(out, err);
    if (*eval) return eval_cmd.run(out);
    if (*validate) return validate_cmd.run(out);
    if (*render) return render_cmd.run(out, err);
    if (*mock) return mock_cmd.run(out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidArgument ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace matex
