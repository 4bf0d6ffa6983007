#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tabreason/common.hpp"
#include "tabreason/decimal.hpp"

namespace tabreason::table {

struct Empty {
  friend bool operator==(const Empty&, const Empty&) = default;
};

class Cell {
 public:
  using Value = std::variant<Empty, std::string, Decimal>;

  Cell() = default;
  static Cell empty() { return Cell(); }
  static Cell text(std::string s) { return Cell(Value(std::move(s))); }
  static Cell number(Decimal d) { return Cell(Value(d)); }

  bool is_empty() const { return std::holds_alternative<Empty>(value_); }
  bool is_text() const { return std::holds_alternative<std::string>(value_); }
  bool is_number() const { return std::holds_alternative<Decimal>(value_); }

  const std::string& as_text() const { return std::get<std::string>(value_); }
  const Decimal& as_number() const { return std::get<Decimal>(value_); }

  // Unescaped display string: "" for empty, canonical decimal for numbers.
  std::string display() const;

  friend bool operator==(const Cell&, const Cell&) = default;

 private:
  explicit Cell(Value v) : value_(std::move(v)) {}
  Value value_;
};

class MalformedTable : public Error {
 public:
  MalformedTable(std::size_t line, const std::string& reason)
      : Error("malformed table at line " + std::to_string(line) + ": " +
              reason),
        line_(line),
        reason_(reason) {}
  std::size_t line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

/// Rectangular table with a single header row. Construction validates the
/// shape, so any non-default Table is well-formed.
class Table {
 public:
  /// Throws std::invalid_argument when headers are empty/blank or a row has
  /// the wrong width.
  Table(std::vector<std::string> headers, std::vector<std::vector<Cell>> rows);
  /// Zero columns; only useful as a placeholder before assignment.
  Table() = default;

  const std::vector<std::string>& headers() const { return headers_; }
  const std::vector<std::vector<Cell>>& rows() const { return rows_; }
  std::size_t num_rows() const { return rows_.size(); }
  std::size_t num_cols() const { return headers_.size(); }
  const Cell& at(std::size_t row, std::size_t col) const {
    return rows_.at(row).at(col);
  }

  friend bool operator==(const Table&, const Table&) = default;

 private:
  std::vector<std::string> headers_;
  std::vector<std::vector<Cell>> rows_;
};

std::string render_markdown(const Table& table);

/// Inverse of render_markdown. Separator cells may carry alignment colons
/// (`:---`, `---:`, `:-:`); outer pipes are optional.
Table parse_markdown(const std::string& text);

}  // namespace tabreason::table
