#include "tabreason/decimal.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "tabreason/common.hpp"

namespace tabreason {

namespace {
constexpr int kMaxDigits = 18;
}

Decimal::Decimal(std::int64_t unscaled, int scale)
    : unscaled_(unscaled), scale_(scale) {
  normalize();
}

Decimal Decimal::from_parts(std::int64_t unscaled, int scale) {
  if (scale < 0 || scale > kMaxDigits) {
    throw std::invalid_argument("decimal scale out of range");
  }
  return Decimal(unscaled, scale);
}

void Decimal::normalize() {
  while (scale_ > 0 && unscaled_ % 10 == 0) {
    unscaled_ /= 10;
    --scale_;
  }
  if (unscaled_ == 0) scale_ = 0;
}

std::optional<Decimal> Decimal::parse(std::string_view text) {
  if (text.empty()) return std::nullopt;
  bool negative = false;
  size_t i = 0;
  if (text[0] == '-') {
    negative = true;
    i = 1;
  }
  const size_t int_begin = i;
  while (i < text.size() && text[i] >= '0' && text[i] <= '9') ++i;
  const size_t int_len = i - int_begin;
  if (int_len == 0) return std::nullopt;
  size_t frac_len = 0;
  size_t frac_begin = i;
  if (i < text.size() && text[i] == '.') {
    frac_begin = ++i;
    while (i < text.size() && text[i] >= '0' && text[i] <= '9') ++i;
    frac_len = i - frac_begin;
    if (frac_len == 0) return std::nullopt;
  }
  if (i != text.size()) return std::nullopt;

  // Drop leading integer zeros and trailing fraction zeros before counting
  // significant digits.
  std::string digits(text.substr(int_begin, int_len));
  std::string frac(frac_len ? text.substr(frac_begin, frac_len) : "");
  while (!frac.empty() && frac.back() == '0') frac.pop_back();
  digits += frac;
  size_t lead = 0;
  while (lead + 1 < digits.size() && digits[lead] == '0') ++lead;
  digits.erase(0, lead);
  if (digits.size() > kMaxDigits || frac.size() > kMaxDigits) {
    return std::nullopt;
  }
  std::int64_t value = 0;
  std::from_chars(digits.data(), digits.data() + digits.size(), value);
  return Decimal(negative ? -value : value, static_cast<int>(frac.size()));
}

std::optional<Decimal> Decimal::from_double(double v) {
  if (!std::isfinite(v)) return std::nullopt;
  std::string s = format_double(v);
  if (s.find_first_of("eE") != std::string::npos) {
    // Re-render in fixed notation with enough digits, then let parse decide.
    char buf[512];
    auto res = std::to_chars(buf, buf + sizeof buf, v,
                             std::chars_format::fixed);
    s.assign(buf, res.ptr);
  }
  return parse(s);
}

std::string Decimal::to_string() const {
  const bool negative = unscaled_ < 0;
  // unscaled_ is bounded by 18 digits so negation cannot overflow.
  std::string digits = std::to_string(negative ? -unscaled_ : unscaled_);
  if (scale_ > 0) {
    if (digits.size() <= static_cast<size_t>(scale_)) {
      digits.insert(0, static_cast<size_t>(scale_) - digits.size() + 1, '0');
    }
    digits.insert(digits.size() - static_cast<size_t>(scale_), ".");
  }
  return negative ? "-" + digits : digits;
}

double Decimal::to_double() const {
  const std::string s = to_string();
  double out = 0.0;
  std::from_chars(s.data(), s.data() + s.size(), out);
  return out;
}

}  // namespace tabreason
