// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "matex/anatomy.hpp"
#include "matex/attribution.hpp"
#include "matex/eval.hpp"
#include "matex/mock.hpp"
#include "matex/oracle.hpp"
#include "matex/prior.hpp"
#include "oracles/reference.hpp"
#include "test_util.hpp"

using namespace matex;
using testutil::max_abs_diff;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

AnatomicalRegion rect(double x0, double x1, double y0, double y1) {
  AnatomicalRegion r;
  r.label = "r";
  r.x_min = x0, r.x_max = x1, r.y_min = y0, r.y_max = y1;
  return r;
}

// Random region set drawn from a seed; boxes stay inside the unit square.
std::vector<AnatomicalRegion> random_regions(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<AnatomicalRegion> rs;
  const int n = static_cast<int>(seed % 4);
  for (int k = 0; k < n; ++k) {
    const double x0 = 0.8 * u(rng), y0 = 0.8 * u(rng);
    rs.push_back(rect(x0, x0 + 0.05 + (0.95 - x0) * u(rng), y0, y0 + 0.05 + (0.95 - y0) * u(rng)));
  }
  return rs;
}

IntermediatesBundle random_attention_bundle(std::size_t L, std::size_t N, std::uint64_t seed) {
  auto b = mock_bundle(seed, L, 1, N, 2);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : b.attn_cls.data) v = u(rng);
  b.attn_normalized = false;
  return b;
}

Outcome p1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  int cases = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed, ++cases) {
    const std::size_t h = 1 + seed % 8, w = 1 + (seed * 3) % 8;
    const auto regions = random_regions(seed);
    std::vector<ref::Box> boxes;
    for (const auto& r : regions) boxes.push_back({r.x_min, r.x_max, r.y_min, r.y_max});
    const double lambda = 1.0 + 0.25 * static_cast<double>(seed);
    worst = std::max(worst, max_abs_diff(build_prior(regions, lambda, h, w).grid.values, ref::prior(boxes, lambda, h, w)));

    const double tau = -2.0 + 0.35 * static_cast<double>(seed);
    const std::size_t L = 1 + seed * 5;
    worst = std::max(worst, max_abs_diff(layer_weights(L, tau), ref::layer_weights(L, tau)));

    const auto b = mock_bundle(seed, 1 + seed % 6, 7, 7, 16);
    const auto c = consistency_map(b);
    worst = std::max(worst, max_abs_diff(c.grid.values, ref::consistency(testutil::rows_of(b.attn_cls))));

    const auto g = gradient_attribution(b), f = attention_flow(b, 0.5);
    const auto p = build_prior(parse_regions(b.text), 2.5, 7, 7);
    FusionWeights fw;
    fw.free_weights = seed % 2;
    if (fw.free_weights) fw.alpha = 0.1 * static_cast<double>(seed), fw.delta = 0.05 * static_cast<double>(seed);
    const auto fused = fuse(g, f, c, p, fw);
    worst = std::max(worst, max_abs_diff(fused.grid.values, ref::fuse(g.grid.values, f.grid.values, c.grid.values,
                                                                      p.grid.values, fw.alpha, fw.beta, fw.gamma,
                                                                      fw.delta)));
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << cases << " seeded cases x 4 equations, max |diff| " << worst << ", " << secs << " s";
  return {worst < 1e-6 && secs < 5.0, d.str()};
}

Outcome p2() {
  bool exact = true;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto one = random_attention_bundle(1, 9 + seed, seed);
    const std::vector<double> row(one.attn_cls.data.begin(), one.attn_cls.data.end());
    exact = exact && attention_flow(one, 0.5 + static_cast<double>(seed)).grid.values == ref::minmax(row);

    const auto three = random_attention_bundle(3, 9 + seed, seed + 50);
    const std::vector<double> last(three.attn_cls.data.begin() + 2 * (9 + seed), three.attn_cls.data.end());
    worst = std::max(worst, max_abs_diff(attention_flow(three, 50.0).grid.values, ref::minmax(last)));
  }
  std::ostringstream d;
  d << "L=1 equals normalized layer: " << (exact ? "yes" : "no") << "; tau=50 on L=3 max |diff| " << worst;
  return {exact && worst < 1e-6, d.str()};
}

Outcome p3() {
  bool ok = true;
  std::ostringstream detail;
  auto b = random_attention_bundle(6, 16, 3);
  const Tensor first = b.attn_cls;
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t i = 0; i < 16; ++i) b.attn_cls.at(l, i) = first.at(0, i) * 0.5f + 0.25f;
  const auto base = consistency_map(b);
  for (double v : base.grid.values) ok = ok && v == 1.0;
  detail << "constant layers C==1: " << (ok ? "yes" : "no");
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double s : {0.05, 0.1, 0.2}) {
    auto noisy = b;
    const std::size_t patch = 5;
    std::vector<double> e(6);
    for (auto& x : e) x = n(rng);
    const double mu = std::accumulate(e.begin(), e.end(), 0.0) / 6.0;
    double sd = 0;
    for (double x : e) sd += (x - mu) * (x - mu);
    sd = std::sqrt(sd / 6.0);
    for (std::size_t l = 0; l < 6; ++l)
      noisy.attn_cls.at(l, patch) += static_cast<float>(s * (e[l] - mu) / sd);
    const auto c = consistency_map(noisy);
    const bool dec = c.grid.values[patch] < base.grid.values[patch];
    ok = ok && dec;
    detail << "; s=" << s << " C=" << c.grid.values[patch] << (dec ? " (<1)" : " (not lower)");
  }
  return {ok, detail.str()};
}

Outcome p4() {
  bool neutral = true, ones = true;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double v : build_prior({}, 2.5, 1 + seed, 7).grid.values) neutral = neutral && v == 1.0;
    // Regions as the parser produces them, one report phrase per case.
    const auto rs = parse_regions(mock_reports()[seed % mock_reports().size()]);
    for (double v : build_prior(rs, 1.0, 7, 7).grid.values) ones = ones && v == 1.0;
    for (double lambda : {1.5, 2.5, 3.5}) {
      const auto m = build_prior(rs, lambda, 7, 7);
      worst = std::max(worst, std::abs(*std::max_element(m.grid.values.begin(), m.grid.values.end()) - lambda));
    }
  }
  std::ostringstream d;
  d << "empty => 1: " << (neutral ? "yes" : "no") << "; lambda=1 => 1: " << (ones ? "yes" : "no")
    << "; max |max M - lambda| " << worst;
  return {neutral && ones && worst < 1e-6, d.str()};
}

Outcome p5() {
  const auto corpus =
      nlohmann::json::parse(testutil::slurp(std::string(MATEX_TEST_DIR) + "/data/parser_corpus.json"));
  std::size_t passed = 0;
  std::string first_fail;
  int caption_rows = 0;
  const std::vector<std::string> figure = {"Left upper lobe consolidation", "Bilateral lower lobe consolidation",
                                           "Right mid-to-upper zone opacity", "Left lower lobe opacification",
                                           "Left mid-lung consolidation"};
  int anchor_rows = 0;
  for (const auto& row : corpus) {
    const std::string text = row["text"];
    const auto got = parse_regions(text);
    bool ok = got.size() == row["regions"].size();
    for (std::size_t i = 0; ok && i < got.size(); ++i) {
      const auto& w = row["regions"][i];
      ok = got[i].label == w["label"].get<std::string>() && got[i].x_min == w["x"][0].get<double>() &&
           got[i].x_max == w["x"][1].get<double>() && got[i].y_min == w["y"][0].get<double>() &&
           got[i].y_max == w["y"][1].get<double>();
    }
    if (ok) ++passed;
    else if (first_fail.empty()) first_fail = text;
    if (text == "right apex" || text == "left base") anchor_rows += ok;
    if (std::find(figure.begin(), figure.end(), text) != figure.end()) caption_rows += ok;
  }
  std::ostringstream d;
  d << passed << "/" << corpus.size() << " phrases exact, anchor rows " << anchor_rows << "/2, captions "
    << caption_rows << "/5";
  if (!first_fail.empty()) d << ", first failure: \"" << first_fail << "\"";
  return {passed == corpus.size() && corpus.size() >= 30 && anchor_rows == 2 && caption_rows == 5, d.str()};
}

Outcome p6() {
  const auto t0 = std::chrono::steady_clock::now();
  double matex_sum = 0, random_sum = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const auto b = mock_bundle(static_cast<std::uint64_t>(s), 4, 7, 7, 16);
    MockOracle oracle(b);
    const EvalTarget target{b, ""};
    const auto ex = explain(b, b.text, ExplainOptions{});
    matex_sum += confidence_drop(oracle, target, ex.fused_patch.grid, 0.10);
    random_sum += confidence_drop_for_mask(oracle, target, random_mask(49, 0.10, 1000 + s));
  }
  const double secs = seconds_since(t0);
  const double m = matex_sum / seeds, r = random_sum / seeds;
  std::ostringstream d;
  d << "mean drop, top-10% MATEX " << m << "% vs random-10% " << r << "% over " << seeds << " seeds, " << secs << " s";
  return {m > r && secs < 30.0, d.str()};
}

Outcome p7() {
  MockOptions o;
  o.seed = 7;
  o.h_patches = 2;
  o.w_patches = 2;
  o.channels = 16;
  o.with_text = true;
  const auto model = make_mock_model(o);
  const auto b = mock_bundle(o);
  const double h = 1e-3;
  double worst = 0;
  for (std::size_t k = 0; k < b.patch_embed.data.size(); ++k) {
    Tensor plus = model.patch_embed, minus = model.patch_embed;
    plus.data[k] += static_cast<float>(h);
    minus.data[k] -= static_cast<float>(h);
    // Divide by the step actually taken after f32 rounding of the perturbed coordinate.
    const double step = static_cast<double>(plus.data[k]) - static_cast<double>(minus.data[k]);
    const double fd = (model.score_at(plus) - model.score_at(minus)) / step;
    const double g = b.grad_patch_embed.data[k];
    worst = std::max(worst, std::abs(fd - g) / std::max(std::abs(g), 1e-12));
  }
  std::ostringstream d;
  d << b.patch_embed.data.size() << " coordinates of a 4-patch bundle, max relative error " << worst;
  return {worst < 1e-3, d.str()};
}

int shell(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome p8() {
  testutil::TempDir d("accept");
  const std::string bin = MATEX_BIN;
  const std::string ds = (d / "ds").string();
  if (shell("'" + bin + "' mock --seed 3 --samples 6 --out '" + ds + "'") != 0) return {false, "matex mock failed"};
  for (const char* run : {"r1", "r2"})
    if (shell("'" + bin + "' eval --dataset '" + ds + "/dataset.json' --out '" + (d / run).string() + "'") != 0)
      return {false, "matex eval failed"};
  const auto a = testutil::slurp(d / "r1" / "report.json"), b = testutil::slurp(d / "r2" / "report.json");
  std::ostringstream msg;
  msg << "report.json " << a.size() << " bytes, identical: " << (a == b ? "yes" : "no");
  return {!a.empty() && a == b, msg.str()};
}

Outcome p9() {
  int eligible = 0, strict = 0, violations = 0;
  std::ostringstream bad;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto b = mock_bundle(s, 4, 7, 7, 16);
    const auto region = parse_regions(b.text).front();
    const std::vector<GroundTruthBox> box{box_from_region(region)};
    ExplainOptions on, off;
    off.lambda_s = 1.0;
    const auto a = explain(b, b.text, on), n = explain(b, b.text, off);
    // Non-degenerate: some patch centered in the region has positive gradient attribution.
    bool live = false;
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 7; ++c)
        live = live || (region.contains((c + 0.5) / 7.0, (r + 0.5) / 7.0) && a.grad.grid(r, c) > 0.0);
    const double mp = mass_in_box(a.fused_pixel.grid, box), m1 = mass_in_box(n.fused_pixel.grid, box);
    if (!live) continue;
    ++eligible;
    if (mp > m1) ++strict;
    if (mp < m1) {
      ++violations;
      bad << " seed " << s << " (" << mp << " < " << m1 << ")";
    }
  }
  std::ostringstream d;
  d << eligible << "/20 eligible, strict increase in " << strict << ", decreases " << violations << bad.str();
  return {violations == 0 && strict >= 15, d.str()};
}

Outcome p10() {
  testutil::TempDir d("accept");
  bool round_trip = true;
  for (std::uint64_t s = 0; s < 10; ++s) {
    MockOptions o;
    o.seed = s;
    o.with_text = s % 2;
    o.layers = 1 + s % 5;
    const auto b = mock_bundle(o);
    const auto dir = d / ("b" + std::to_string(s));
    save_bundle(b, dir);
    round_trip = round_trip && load_bundle(dir) == b;
  }
  struct Inject {
    const char* code;
    std::function<void(IntermediatesBundle&)> f;
  };
  const std::vector<Inject> injections = {
      {codes::kNegativeAttention, [](auto& b) { b.attn_cls.data[0] = -0.5f; }},
      {codes::kRowSumOutOfRange, [](auto& b) { b.attn_cls.data[0] += 0.3f; }},
      {codes::kGridMismatch, [](auto& b) { b.grid.h_patches += 1; }},
      {codes::kNonFinite, [](auto& b) { b.grad_patch_embed.data[0] = std::nanf(""); }},
      {codes::kTextPartial, [](auto& b) { b.grad_token_embed.reset(); }},
      {codes::kBadShape, [](auto& b) { b.patch_embed.shape = {49, 0}; }},
  };
  int detected = 0;
  for (const auto& inj : injections) {
    MockOptions o;
    o.with_text = true;
    auto b = mock_bundle(o);
    inj.f(b);
    for (const auto& f : validate_bundle(b))
      if (f.code == inj.code) {
        ++detected;
        break;
      }
  }
  const bool clean = validate_bundle(mock_bundle(MockOptions{})).empty();
  std::ostringstream s;
  s << "round trip bit-exact on 10 bundles: " << (round_trip ? "yes" : "no") << "; violations detected " << detected
    << "/" << injections.size() << "; clean bundle empty report: " << (clean ? "yes" : "no");
  return {round_trip && clean && detected == static_cast<int>(injections.size()), s.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"P1 equation oracles", p1},        {"P2 flow limits", p2},          {"P3 consistency", p3},
      {"P4 prior properties", p4},        {"P5 parser corpus", p5},        {"P6 faithfulness", p6},
      {"P7 gradient check", p7},          {"P8 determinism", p8},          {"P9 prior steering", p9},
      {"P10 round trip + validation", p10},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures ? "acceptance: FAILED " + std::to_string(failures) : std::string("acceptance: all passed"))
            << std::endl;
  return failures ? 1 : 0;
}
