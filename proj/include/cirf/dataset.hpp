#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cirf/error.hpp"
#include "cirf/fol.hpp"

namespace cirf {

/// Declared label vocabulary. Index 0 is the favoring class, 1 the opposing
/// class, 2 the neutral class.
enum class LabelSet { FavorAgainstNone, ProConNeutral };

inline const char* label_set_name(LabelSet s) {
  return s == LabelSet::FavorAgainstNone ? "favor-against-none" : "pro-con-neutral";
}

inline LabelSet label_set_from_name(std::string_view s) {
  if (s == "favor-against-none") return LabelSet::FavorAgainstNone;
  if (s == "pro-con-neutral") return LabelSet::ProConNeutral;
  throw ConfigError("unknown label set '" + std::string(s) +
                    "' (expected favor-against-none or pro-con-neutral)");
}

inline std::array<std::string, 3> label_names(LabelSet s) {
  if (s == LabelSet::FavorAgainstNone) return {"Favor", "Against", "None"};
  return {"Pro", "Con", "Neutral"};
}

inline std::optional<int> parse_label(LabelSet s, std::string_view value) {
  std::string lower(value);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto names = label_names(s);
  for (int i = 0; i < 3; ++i) {
    std::string n = names[i];
    std::transform(n.begin(), n.end(), n.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == n) return i;
  }
  return std::nullopt;
}

struct LabeledExample {
  std::string text;
  std::string target;
  int label = 0;
  // Filled by the rationale stage.
  std::string rationale;
  std::optional<std::string> attitude;
  FolGraph graph;
  std::size_t fol_lines = 0;
  std::size_t skipped_lines = 0;
  bool fallback = false;
};

/// RFC 4180 records: quoted fields may contain commas, doubled quotes and
/// newlines. A leading UTF-8 BOM is ignored.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view data) {
  if (data.starts_with("\xEF\xBB\xBF")) data.remove_prefix(3);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
      if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
      row.clear();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw IoError("unterminated quoted field at end of CSV");
  if (field_started || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Loads `text,target,label` rows; labels must belong to `labels`.
inline std::vector<LabeledExample> load_dataset(const std::filesystem::path& path, LabelSet labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto rows = parse_csv(ss.str());
  if (rows.empty()) throw BadHeader("empty file " + path.string());
  auto norm = [](std::string s) {
    s = std::string(detail::trim(s));
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  };
  const auto& header = rows.front();
  if (header.size() != 3 || norm(header[0]) != "text" || norm(header[1]) != "target" ||
      norm(header[2]) != "label")
    throw BadHeader("expected header 'text,target,label' in " + path.string());
  std::vector<LabeledExample> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 3)
      throw BadLabel(r, "row has " + std::to_string(row.size()) + " fields, expected 3");
    const auto label = parse_label(labels, detail::trim(row[2]));
    if (!label) throw BadLabel(r, row[2]);
    LabeledExample ex;
    ex.text = row[0];
    ex.target = row[1];
    ex.label = *label;
    out.push_back(std::move(ex));
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<LabeledExample>& rows,
                          LabelSet labels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto names = label_names(labels);
  out << "text,target,label\n";
  for (const auto& ex : rows)
    out << csv_escape(ex.text) << ',' << csv_escape(ex.target) << ',' << names.at(ex.label) << '\n';
}

}  // namespace cirf
