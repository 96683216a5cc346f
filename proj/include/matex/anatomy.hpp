#pragma once

// Rule-based extraction of lung zones from free-text radiology phrases.
//
// Coordinates are normalized viewer-frame image coordinates: x grows to the
// image right, y grows downward. "right" maps to the image-right half as-is.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace matex {

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct AnatomicalRegion {
  std::string label;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  // Character range [begin, end) in the text passed to parse_regions.
  std::size_t span_begin = 0, span_end = 0;

  bool contains(double x, double y) const noexcept {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  // Region identity ignores where in the text it was found.
  bool same_region(const AnatomicalRegion& o) const noexcept {
    return label == o.label && x_min == o.x_min && x_max == o.x_max && y_min == o.y_min && y_max == o.y_max;
  }
};

enum class Laterality { Left, Right, Bilateral };

struct LexiconEntry {
  std::vector<std::string> pattern;
  std::optional<Laterality> laterality;
  std::optional<std::string> zone;
  bool anchor = false;
  // Explicit override for complete (laterality + zone) entries.
  std::optional<std::string> label;
  std::optional<Range> x, y;
};

class Lexicon {
 public:
  // Compiled-in copy of data/lexicon.json.
  static const Lexicon& builtin();
  static Lexicon from_json(std::string_view json_text);
  static Lexicon from_file(const std::filesystem::path& path);

  const std::vector<LexiconEntry>& entries() const noexcept { return entries_; }
  std::size_t window() const noexcept { return window_; }
  Range laterality_x(std::string_view side) const;
  Range zone_y(std::string_view zone) const;
  // Every label parse_regions can emit with this lexicon.
  std::vector<std::string> labels() const;
  bool has_label(std::string_view label) const;

 private:
  std::vector<LexiconEntry> entries_;
  std::map<std::string, Range, std::less<>> lat_x_;
  std::map<std::string, Range, std::less<>> zone_y_;
  std::size_t window_ = 4;
};

std::string builtin_lexicon_json();

// Lowercase, punctuation (including hyphens) to single spaces, collapsed whitespace.
std::string normalize_text(std::string_view text);

std::vector<AnatomicalRegion> parse_regions(std::string_view text, const Lexicon& lexicon = Lexicon::builtin());

}  // namespace matex
