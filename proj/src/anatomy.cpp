#include "matex/anatomy.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "matex/error.hpp"
#include "matex/fsutil.hpp"

namespace matex {

using nlohmann::json;

namespace {

struct Token {
  std::string text;
  std::size_t begin = 0, end = 0;  // character offsets in the source
};

bool is_word_byte(unsigned char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; }

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    Token t;
    t.begin = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
      char c = text[i];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      t.text.push_back(c);
      ++i;
    }
    t.end = i;
    tokens.push_back(std::move(t));
  }
  return tokens;
}

Range parse_range(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw Error(ErrorCode::BadLexicon, what + ": expected [lo, hi]");
  Range r{j[0].get<double>(), j[1].get<double>()};
  if (!(r.lo >= 0.0 && r.lo < r.hi && r.hi <= 1.0))
    throw Error(ErrorCode::BadLexicon, what + ": need 0 <= lo < hi <= 1");
  return r;
}

Laterality parse_laterality(const std::string& s) {
  if (s == "left") return Laterality::Left;
  if (s == "right") return Laterality::Right;
  if (s == "bilateral") return Laterality::Bilateral;
  throw Error(ErrorCode::BadLexicon, "unknown laterality '" + s + "'");
}

enum class TermKind { Side, Zone, Complete, Anchor };

struct Term {
  TermKind kind;
  const LexiconEntry* entry;
  std::size_t tok_begin, tok_end;    // token indices [begin, end)
  std::size_t char_begin, char_end;  // source offsets
};

}  // namespace

const Lexicon& Lexicon::builtin() {
  static const Lexicon lexicon = from_json(builtin_lexicon_json());
  return lexicon;
}

Lexicon Lexicon::from_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::BadLexicon, e.what());
  }
  return from_json(text);
}

Lexicon Lexicon::from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadLexicon, e.what());
  }
  Lexicon lex;
  try {
    lex.window_ = j.value("window", std::size_t{4});
    if (lex.window_ == 0) throw Error(ErrorCode::BadLexicon, "window must be >= 1");
    for (const auto& [side, range] : j.at("laterality_x").items())
      lex.lat_x_[side] = parse_range(range, "laterality_x." + side);
    for (const auto& [zone, range] : j.at("zone_y").items())
      lex.zone_y_[zone] = parse_range(range, "zone_y." + zone);
    for (const char* side : {"left", "right", "unspecified"})
      if (!lex.lat_x_.contains(side)) throw Error(ErrorCode::BadLexicon, std::string("laterality_x.") + side + " missing");
    if (!lex.zone_y_.contains("lung")) throw Error(ErrorCode::BadLexicon, "zone_y.lung missing");

    for (const auto& e : j.at("entries")) {
      LexiconEntry entry;
      entry.pattern = e.at("pattern").get<std::vector<std::string>>();
      if (entry.pattern.empty()) throw Error(ErrorCode::BadLexicon, "empty pattern");
      for (const auto& tok : entry.pattern)
        if (tok.empty() || normalize_text(tok) != tok)
          throw Error(ErrorCode::BadLexicon, "pattern token '" + tok + "' is not normalized");
      if (e.contains("laterality")) entry.laterality = parse_laterality(e.at("laterality").get<std::string>());
      if (e.contains("zone")) {
        entry.zone = e.at("zone").get<std::string>();
        if (!lex.zone_y_.contains(*entry.zone)) throw Error(ErrorCode::BadLexicon, "unknown zone '" + *entry.zone + "'");
      }
      entry.anchor = e.value("anchor", false);
      if (e.contains("label")) entry.label = e.at("label").get<std::string>();
      if (e.contains("x")) entry.x = parse_range(e.at("x"), "entry x");
      if (e.contains("y")) entry.y = parse_range(e.at("y"), "entry y");
      const bool complete = entry.laterality && entry.zone;
      if ((entry.label || entry.x || entry.y) && !complete)
        throw Error(ErrorCode::BadLexicon, "label/x/y overrides need both laterality and zone");
      if (!entry.laterality && !entry.zone && !entry.anchor)
        throw Error(ErrorCode::BadLexicon, "entry has no laterality, zone or anchor");
      lex.entries_.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadLexicon, e.what());
  }
  return lex;
}

Range Lexicon::laterality_x(std::string_view side) const {
  auto it = lat_x_.find(side);
  if (it == lat_x_.end()) throw Error(ErrorCode::BadLexicon, "no laterality " + std::string(side));
  return it->second;
}

Range Lexicon::zone_y(std::string_view zone) const {
  auto it = zone_y_.find(zone);
  if (it == zone_y_.end()) throw Error(ErrorCode::BadLexicon, "no zone " + std::string(zone));
  return it->second;
}

std::vector<std::string> Lexicon::labels() const {
  std::set<std::string> out;
  for (const auto& [zone, _] : zone_y_) {
    out.insert("left_" + zone);
    out.insert("right_" + zone);
    if (zone != "lung") out.insert(zone);
  }
  for (const auto& e : entries_)
    if (e.label) out.insert(*e.label);
  return {out.begin(), out.end()};
}

bool Lexicon::has_label(std::string_view label) const {
  const auto all = labels();
  return std::find(all.begin(), all.end(), label) != all.end();
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& t : tokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t.text;
  }
  return out;
}

namespace {

class RegionBuilder {
 public:
  explicit RegionBuilder(const Lexicon& lex) : lex_(lex) {}

  // `side` empty means laterality unspecified.
  void add(std::size_t order, std::optional<Laterality> side, const std::string& zone, std::size_t span_begin,
           std::size_t span_end) {
    if (side == Laterality::Bilateral) {
      add(order, Laterality::Left, zone, span_begin, span_end);
      add(order, Laterality::Right, zone, span_begin, span_end);
      return;
    }
    AnatomicalRegion r;
    const char* side_name = !side ? "unspecified" : (*side == Laterality::Left ? "left" : "right");
    r.label = side ? std::string(side_name) + "_" + zone : zone;
    const Range x = lex_.laterality_x(side_name), y = lex_.zone_y(zone);
    r.x_min = x.lo, r.x_max = x.hi, r.y_min = y.lo, r.y_max = y.hi;
    r.span_begin = span_begin, r.span_end = span_end;
    pending_.push_back({order, seq_++, std::move(r)});
  }

  void add_override(std::size_t order, const LexiconEntry& e, std::size_t span_begin, std::size_t span_end) {
    if (!e.label && !e.x && !e.y) {
      add(order, e.laterality, *e.zone, span_begin, span_end);
      return;
    }
    AnatomicalRegion r;
    const char* side_name = *e.laterality == Laterality::Left ? "left" : *e.laterality == Laterality::Right ? "right" : "unspecified";
    r.label = e.label ? *e.label : std::string(side_name) + "_" + *e.zone;
    const Range x = e.x ? *e.x : lex_.laterality_x(side_name);
    const Range y = e.y ? *e.y : lex_.zone_y(*e.zone);
    r.x_min = x.lo, r.x_max = x.hi, r.y_min = y.lo, r.y_max = y.hi;
    r.span_begin = span_begin, r.span_end = span_end;
    pending_.push_back({order, seq_++, std::move(r)});
  }

  std::vector<AnatomicalRegion> finish() {
    std::stable_sort(pending_.begin(), pending_.end(),
                     [](const Pending& a, const Pending& b) { return a.order < b.order; });
    std::vector<AnatomicalRegion> out;
    std::set<std::string> seen;
    for (auto& p : pending_)
      if (seen.insert(p.region.label).second) out.push_back(std::move(p.region));
    return out;
  }

 private:
  struct Pending {
    std::size_t order, seq;
    AnatomicalRegion region;
  };
  const Lexicon& lex_;
  std::vector<Pending> pending_;
  std::size_t seq_ = 0;
};

std::vector<Term> match_terms(const std::vector<Token>& tokens, const Lexicon& lex) {
  std::vector<Term> terms;
  std::size_t pos = 0;
  while (pos < tokens.size()) {
    const LexiconEntry* best = nullptr;
    for (const auto& e : lex.entries()) {
      const auto n = e.pattern.size();
      if (pos + n > tokens.size() || (best && n <= best->pattern.size())) continue;
      bool ok = true;
      for (std::size_t k = 0; k < n && ok; ++k) ok = tokens[pos + k].text == e.pattern[k];
      if (ok) best = &e;
    }
    if (!best) {
      ++pos;
      continue;
    }
    const std::size_t end = pos + best->pattern.size();
    TermKind kind = best->anchor && !best->laterality && !best->zone ? TermKind::Anchor
                    : best->laterality && best->zone                  ? TermKind::Complete
                    : best->laterality                                ? TermKind::Side
                                                                      : TermKind::Zone;
    terms.push_back({kind, best, pos, end, tokens[pos].begin, tokens[end - 1].end});
    pos = end;
  }
  return terms;
}

}  // namespace

std::vector<AnatomicalRegion> parse_regions(std::string_view text, const Lexicon& lex) {
  const auto tokens = tokenize(text);
  const auto terms = match_terms(tokens, lex);
  const std::size_t reach = lex.window() - 1;  // max token offset between paired term starts

  auto within = [&](const Term& a, const Term& b) {
    const auto d = a.tok_begin > b.tok_begin ? a.tok_begin - b.tok_begin : b.tok_begin - a.tok_begin;
    return d <= reach;
  };
  // A side term "owns" a zone if that zone follows it inside the window.
  auto has_following_zone = [&](std::size_t side_idx) {
    for (std::size_t k = side_idx + 1; k < terms.size(); ++k)
      if (terms[k].kind == TermKind::Zone && within(terms[side_idx], terms[k])) return true;
    return false;
  };

  RegionBuilder builder(lex);
  std::vector<bool> side_used(terms.size(), false);

  for (std::size_t z = 0; z < terms.size(); ++z) {
    const Term& zone = terms[z];
    if (zone.kind == TermKind::Complete) {
      builder.add_override(zone.tok_begin, *zone.entry, zone.char_begin, zone.char_end);
      continue;
    }
    if (zone.kind != TermKind::Zone) continue;

    std::optional<std::size_t> side;
    for (std::size_t k = z; k-- > 0;) {
      if (!within(terms[k], zone)) break;
      if (terms[k].kind == TermKind::Side) {
        side = k;
        break;
      }
    }
    if (!side) {
      for (std::size_t k = z + 1; k < terms.size() && within(zone, terms[k]); ++k)
        if (terms[k].kind == TermKind::Side && !has_following_zone(k)) {
          side = k;
          break;
        }
    }
    if (side) {
      side_used[*side] = true;
      const Term& s = terms[*side];
      builder.add(zone.tok_begin, s.entry->laterality, *zone.entry->zone, std::min(s.char_begin, zone.char_begin),
                  std::max(s.char_end, zone.char_end));
    } else {
      builder.add(zone.tok_begin, std::nullopt, *zone.entry->zone, zone.char_begin, zone.char_end);
    }
  }

  // Side terms left over: share a following zone ("left and right bases"),
  // else attach to a lung anchor ("left lung").
  for (std::size_t s = 0; s < terms.size(); ++s) {
    if (terms[s].kind != TermKind::Side || side_used[s]) continue;
    const Term& side = terms[s];
    const Term* partner = nullptr;
    for (std::size_t k = s + 1; k < terms.size() && within(side, terms[k]); ++k)
      if (terms[k].kind == TermKind::Zone) {
        partner = &terms[k];
        break;
      }
    if (partner) {
      builder.add(side.tok_begin, side.entry->laterality, *partner->entry->zone, side.char_begin, partner->char_end);
      continue;
    }
    for (const auto& t : terms)
      if (t.kind == TermKind::Anchor && within(side, t)) {
        builder.add(side.tok_begin, side.entry->laterality, "lung", std::min(side.char_begin, t.char_begin),
                    std::max(side.char_end, t.char_end));
        break;
      }
  }
  return builder.finish();
}

}  // namespace matex
