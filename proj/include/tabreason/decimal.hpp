#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace tabreason {

/// Exact base-10 number: unscaled * 10^-scale. Always kept normalized
/// (no trailing fractional zeros, no negative zero), so structural equality
/// is numeric equality.
class Decimal {
 public:
  Decimal() = default;
  static Decimal from_int(std::int64_t v) { return Decimal(v, 0); }
  static Decimal from_parts(std::int64_t unscaled, int scale);

  /// Accepts `-?\d+(\.\d+)?`. Anything else (exponents, separators,
  /// leading '+', surrounding blanks) is rejected.
  static std::optional<Decimal> parse(std::string_view text);

  /// Shortest exact decimal of a finite double, or nullopt when it does not
  /// fit in 18 significant digits.
  static std::optional<Decimal> from_double(double v);

  std::string to_string() const;
  double to_double() const;

  std::int64_t unscaled() const { return unscaled_; }
  int scale() const { return scale_; }
  bool is_integer() const { return scale_ == 0; }

  friend bool operator==(const Decimal&, const Decimal&) = default;

 private:
  Decimal(std::int64_t unscaled, int scale);
  void normalize();

  std::int64_t unscaled_ = 0;
  int scale_ = 0;
};

}  // namespace tabreason
