#include "tabreason/table.hpp"

#include <stdexcept>

namespace tabreason::table {

std::string Cell::display() const {
  if (is_text()) return as_text();
  if (is_number()) return as_number().to_string();
  return {};
}

Table::Table(std::vector<std::string> headers,
             std::vector<std::vector<Cell>> rows)
    : headers_(std::move(headers)), rows_(std::move(rows)) {
  if (headers_.empty()) throw std::invalid_argument("table has no columns");
  for (const auto& h : headers_) {
    if (trim(h).empty()) throw std::invalid_argument("blank header");
  }
  for (size_t r = 0; r < rows_.size(); ++r) {
    if (rows_[r].size() != headers_.size()) {
      throw std::invalid_argument("row " + std::to_string(r) + " has " +
                                  std::to_string(rows_[r].size()) +
                                  " cells, expected " +
                                  std::to_string(headers_.size()));
    }
  }
}

namespace {

std::string escape_cell(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

void append_row(std::string& out, const std::vector<std::string>& cells) {
  out += '|';
  for (const auto& c : cells) {
    out += ' ';
    out += c;
    out += " |";
  }
}

// Splits one markdown row on unescaped pipes; `\|` becomes `|`, any other
// backslash is literal. Outer pipes are optional.
std::vector<std::string> split_row(const std::string& raw) {
  std::string line = trim(raw);
  if (!line.empty() && line.front() == '|') line.erase(0, 1);
  const bool escaped_tail = line.size() >= 2 && line[line.size() - 2] == '\\';
  if (!line.empty() && line.back() == '|' && !escaped_tail) line.pop_back();

  std::vector<std::string> cells;
  std::string cur;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '\\' && i + 1 < line.size() && line[i + 1] == '|') {
      cur += '|';
      ++i;
    } else if (c == '|') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

bool is_separator_cell(const std::string& cell) {
  std::string s = cell;
  if (!s.empty() && s.front() == ':') s.erase(0, 1);
  if (!s.empty() && s.back() == ':') s.pop_back();
  if (s.empty()) return false;
  for (char c : s) {
    if (c != '-') return false;
  }
  return true;
}

Cell parse_cell(const std::string& s) {
  if (s.empty()) return Cell::empty();
  if (auto d = Decimal::parse(s)) return Cell::number(*d);
  return Cell::text(s);
}

}  // namespace

std::string render_markdown(const Table& table) {
  std::string out;
  std::vector<std::string> cells;
  for (const auto& h : table.headers()) cells.push_back(escape_cell(h));
  append_row(out, cells);
  out += '\n';
  append_row(out, std::vector<std::string>(table.num_cols(), "---"));
  for (const auto& row : table.rows()) {
    cells.clear();
    for (const auto& c : row) cells.push_back(escape_cell(c.display()));
    out += '\n';
    append_row(out, cells);
  }
  return out;
}

Table parse_markdown(const std::string& text) {
  struct Line {
    size_t number;
    std::string text;
  };
  std::vector<Line> lines;
  size_t start = 0;
  size_t number = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    ++number;
    std::string line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) lines.push_back({number, std::move(line)});
    start = nl + 1;
  }
  if (lines.empty()) throw MalformedTable(1, "zero columns");

  std::vector<std::string> headers = split_row(lines[0].text);
  if (headers.size() == 1 && headers[0].empty()) {
    throw MalformedTable(lines[0].number, "zero columns");
  }
  for (const auto& h : headers) {
    if (h.empty()) throw MalformedTable(lines[0].number, "blank header");
  }
  if (lines.size() < 2) {
    throw MalformedTable(lines[0].number + 1, "missing separator row");
  }
  const auto sep = split_row(lines[1].text);
  for (const auto& c : sep) {
    if (!is_separator_cell(c)) {
      throw MalformedTable(lines[1].number, "missing separator row");
    }
  }
  if (sep.size() != headers.size()) {
    throw MalformedTable(lines[1].number,
                         "separator width does not match header");
  }

  std::vector<std::vector<Cell>> rows;
  for (size_t i = 2; i < lines.size(); ++i) {
    const auto raw = split_row(lines[i].text);
    if (raw.size() != headers.size()) {
      throw MalformedTable(lines[i].number,
                           "ragged row: " + std::to_string(raw.size()) +
                               " cells, expected " +
                               std::to_string(headers.size()));
    }
    std::vector<Cell> row;
    row.reserve(raw.size());
    for (const auto& c : raw) row.push_back(parse_cell(c));
    rows.push_back(std::move(row));
  }
  return Table(std::move(headers), std::move(rows));
}

}  // namespace tabreason::table
