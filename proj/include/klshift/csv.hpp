#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "klshift/core.hpp"

// Strict CSV ingestion: header row required, RFC-style quoting, consistent
// field counts. Numeric parsing consumes the whole cell. Covariate columns
// that fail numeric parsing are one-hot expanded over all observed levels
// (lexicographic order, names "col=value").

namespace klshift {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col_index(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw data_error("column not found: " + name);
  }
};

inline CsvTable parse_csv_text(const std::string& text) {
  CsvTable table;
  std::vector<std::string> fields;
  std::string cell;
  bool in_quotes = false;
  bool cell_quoted = false;
  std::size_t line = 1, cell_line = 1;
  bool any = false;

  auto end_cell = [&]() {
    fields.push_back(cell);
    cell.clear();
    cell_quoted = false;
    cell_line = line;
  };
  auto end_row = [&]() {
    end_cell();
    if (table.header.empty()) {
      if (fields.size() == 1 && fields[0].empty())
        throw data_error("csv: empty header row");
      table.header = fields;
    } else {
      if (fields.size() != table.header.size())
        throw data_error("csv: line " + std::to_string(cell_line) + " has " +
                         std::to_string(fields.size()) + " fields, expected " +
                         std::to_string(table.header.size()));
      table.rows.push_back(fields);
    }
    fields.clear();
  };

  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    const char ch = text[pos];
    any = true;
    if (in_quotes) {
      if (ch == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          cell.push_back('"');
          ++pos;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        cell.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!cell.empty() || cell_quoted)
          throw data_error("csv: stray quote on line " + std::to_string(line));
        in_quotes = true;
        cell_quoted = true;
        break;
      case ',':
        end_cell();
        break;
      case '\r':
        if (pos + 1 < text.size() && text[pos + 1] == '\n') break;  // CRLF
        [[fallthrough]];
      case '\n':
        end_row();
        ++line;
        break;
      default:
        if (cell_quoted)
          throw data_error("csv: text after closing quote on line " +
                           std::to_string(line));
        cell.push_back(ch);
    }
  }
  if (in_quotes)
    throw data_error("csv: unterminated quote opened on line " +
                     std::to_string(cell_line));
  if (any && (!cell.empty() || !fields.empty())) end_row();  // no final \n
  if (table.header.empty()) throw data_error("csv: empty input");
  {
    std::set<std::string> seen;
    for (const auto& h : table.header)
      if (!seen.insert(h).second)
        throw data_error("csv: duplicate column name: " + h);
  }
  return table;
}

inline CsvTable parse_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv_text(buf.str());
}

namespace detail {

inline bool parse_number(const std::string& cell, double* out) {
  if (cell.empty()) return false;
  const char* s = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  while (end && *end == ' ') ++end;
  if (end == s || (end && *end != '\0')) return false;
  *out = v;
  return true;
}

}  // namespace detail

struct LoadedData {
  Dataset data;
  std::vector<std::string> one_hot_sources;  // original categorical columns
};

// Assembles a Dataset from a parsed table. Covariate selection empty means
// "all columns except outcome and treatment". Row numbers in errors are
// 1-based data rows (header excluded).
inline LoadedData make_dataset(const CsvTable& table, const std::string& y_col,
                               const std::string& d_col,
                               std::vector<std::string> covariates) {
  LoadedData out;
  const std::size_t yj = table.col_index(y_col);
  const std::size_t dj = table.col_index(d_col);
  if (yj == dj)
    throw data_error("outcome and treatment are the same column: " + y_col);

  if (covariates.empty()) {
    for (const auto& h : table.header)
      if (h != y_col && h != d_col) covariates.push_back(h);
  }
  if (covariates.empty()) throw data_error("no covariate columns selected");
  for (const auto& c : covariates)
    if (c == y_col || c == d_col)
      throw data_error("column " + c + " selected as both covariate and " +
                       (c == y_col ? "outcome" : "treatment"));

  const std::size_t n = table.rows.size();
  if (n == 0) throw data_error("csv: no data rows");

  Dataset& ds = out.data;
  ds.y.resize(n);
  ds.d.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::parse_number(table.rows[i][yj], &ds.y[i]))
      throw data_error("non-numeric outcome cell at row " +
                       std::to_string(i + 1) + ", column " + y_col + ": \"" +
                       table.rows[i][yj] + "\"");
    double dv = 0.0;
    if (!detail::parse_number(table.rows[i][dj], &dv) ||
        (dv != 0.0 && dv != 1.0))
      throw data_error("treatment must be 0 or 1; row " +
                       std::to_string(i + 1) + ", column " + d_col + ": \"" +
                       table.rows[i][dj] + "\"");
    ds.d[i] = static_cast<int>(dv);
  }

  for (const auto& name : covariates) {
    const std::size_t j = table.col_index(name);
    std::vector<double> numeric(n);
    bool is_numeric = true;
    for (std::size_t i = 0; i < n && is_numeric; ++i)
      is_numeric = detail::parse_number(table.rows[i][j], &numeric[i]);
    if (is_numeric) {
      ds.x_cols.push_back(std::move(numeric));
      ds.x_names.push_back(name);
      continue;
    }
    // categorical: one-hot over all levels, lexicographic
    std::set<std::string> levels;
    for (std::size_t i = 0; i < n; ++i) {
      if (table.rows[i][j].empty())
        throw data_error("empty cell at row " + std::to_string(i + 1) +
                         ", column " + name);
      levels.insert(table.rows[i][j]);
    }
    out.one_hot_sources.push_back(name);
    for (const auto& level : levels) {
      std::vector<double> col(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (table.rows[i][j] == level) col[i] = 1.0;
      ds.x_cols.push_back(std::move(col));
      ds.x_names.push_back(name + "=" + level);
    }
  }
  ds.validate();
  return out;
}

inline LoadedData load_csv(const std::string& path, const std::string& y_col,
                           const std::string& d_col,
                           const std::vector<std::string>& covariates = {}) {
  return make_dataset(parse_csv_file(path), y_col, d_col, covariates);
}

}  // namespace klshift
