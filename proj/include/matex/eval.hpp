#pragma once

// Perturbation and localization metrics, and the dataset-level evaluation run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matex/attribution.hpp"
#include "matex/bundle.hpp"
#include "matex/grid.hpp"
#include "matex/oracle.hpp"

namespace matex {

enum class MaskMode { Top, Bottom };

inline constexpr double kDefaultMaskFraction = 0.10;

// Normalized viewer-frame box: [x, x + w] x [y, y + h], boundaries inclusive.
struct GroundTruthBox {
  double x = 0, y = 0, w = 0, h = 0;
  void validate() const;
  bool contains(double px, double py) const noexcept { return px >= x && px <= x + w && py >= y && py <= y + h; }
};

// ceil(fraction * N) cells chosen by descending (Top) or ascending (Bottom)
// value; ties go to the lower row-major index.
std::vector<bool> mask_patches(const Grid& attribution, double fraction, MaskMode mode);
std::vector<bool> mask_values(const std::vector<double>& values, double fraction, MaskMode mode);
std::size_t mask_count(std::size_t n, double fraction);
// Seeded uniform-random selection of ceil(fraction * n) cells.
std::vector<bool> random_mask(std::size_t n, double fraction, std::uint64_t seed);

std::vector<std::size_t> mask_indices(const std::vector<bool>& mask);

// The thing being evaluated: a loaded bundle plus where it lives (for external oracles).
struct EvalTarget {
  const IntermediatesBundle& bundle;
  std::string bundle_dir;
};

// 100 * max(0, (S_orig - S_masked) / max(|S_orig|, 1e-8)) for the given patch mask.
double confidence_drop_for_mask(ScoreOracle& oracle, const EvalTarget& target, const std::vector<bool>& mask);
// 100 * max(0, (S_masked - S_orig) / max(|S_orig|, 1e-8)).
double confidence_increase_for_mask(ScoreOracle& oracle, const EvalTarget& target, const std::vector<bool>& mask);

double confidence_drop(ScoreOracle& oracle, const EvalTarget& target, const Grid& attribution, double fraction);
double confidence_increase(ScoreOracle& oracle, const EvalTarget& target, const Grid& attribution, double fraction);

struct TokenConfidence {
  double drop = 0.0;
  double incr = 0.0;
};
TokenConfidence token_confidence_metrics(ScoreOracle& oracle, const EvalTarget& target, const TokenRelevance& relevance,
                                         double fraction);

// Argmax pixel (ties: smallest row-major index) inside any box, by pixel center.
bool pointing_game(const Grid& attribution, const std::vector<GroundTruthBox>& boxes);
// Attribution mass over pixels whose center lies in the union of boxes, over total mass.
double mass_in_box(const Grid& attribution, const std::vector<GroundTruthBox>& boxes);

// Box covering an anatomical region.
GroundTruthBox box_from_region(const AnatomicalRegion& region);

// Average of pixels whose centers fall in each patch cell.
Grid pool_to_grid(const Grid& pixels, std::size_t rows, std::size_t cols);

// ---- dataset run ----------------------------------------------------------

struct SampleRecord {
  std::string sample_id;
  std::string method;
  double conf_drop_pct = 0.0;
  double conf_incr_pct = 0.0;
  std::optional<bool> pointing_hit;
  std::optional<double> mass_in_box;
  std::optional<double> text_conf_drop_pct;
  std::optional<double> text_conf_incr_pct;
};

struct FailureRecord {
  std::string sample_id;
  std::string method;  // "*" when the whole sample failed
  std::string error;
};

struct MetricSummary {
  double mean = 0, std = 0, min = 0, max = 0;
  std::size_t n = 0;
};

struct EvalReport {
  std::vector<SampleRecord> records;
  std::vector<FailureRecord> failures;
  std::map<std::string, std::map<std::string, MetricSummary>> aggregates;
  nlohmann::json metadata;
};

struct EvalConfig {
  std::vector<std::string> methods = {"matex", "grad", "flow"};
  FusionWeights weights;
  double lambda_s = 2.5;
  double fraction = kDefaultMaskFraction;
  bool value_weighting = false;
  std::optional<std::string> oracle_cmd;  // external oracle process; mock oracle when absent
  int jobs = 1;
  const Lexicon* lexicon = nullptr;  // builtin when null
};

EvalReport run_eval(const std::filesystem::path& dataset_manifest, const EvalConfig& config);

nlohmann::json to_json(const EvalReport& report);
std::string to_csv(const EvalReport& report);
// Writes report.json and report.csv atomically into out_dir.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir);

// External map file: {"h": H, "w": W, "grid": [row-major values]}.
Grid load_map_file(const std::filesystem::path& path);
nlohmann::json map_to_json(const Grid& grid);

}  // namespace matex
