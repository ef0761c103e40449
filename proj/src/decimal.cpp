#include "opera/decimal.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace opera {

namespace {

std::int64_t pow10_i64(int n) {
  std::int64_t r = 1;
  for (int i = 0; i < n; ++i) r *= 10;
  return r;
}

// Digits with optional well-formed comma grouping; commas removed on success.
bool read_integer_part(std::string_view s, std::string& digits) {
  if (s.empty()) return false;
  bool has_comma = s.find(',') != std::string_view::npos;
  if (!has_comma) {
    for (char c : s)
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    digits = std::string(s);
    return true;
  }
  // Leading group of 1-3 digits, then ",ddd" groups.
  std::size_t i = 0;
  std::size_t lead = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
    ++i;
    ++lead;
  }
  if (lead == 0 || lead > 3) return false;
  digits.assign(s.substr(0, lead));
  while (i < s.size()) {
    if (s[i] != ',') return false;
    ++i;
    for (int k = 0; k < 3; ++k, ++i) {
      if (i >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i]))) return false;
      digits.push_back(s[i]);
    }
  }
  return true;
}

}  // namespace

Decimal Decimal::from_parts(std::int64_t mantissa, int scale) {
  Decimal d(mantissa, scale);
  d.normalize();
  return d;
}

void Decimal::normalize() {
  if (mantissa_ == 0) {
    scale_ = 0;
    return;
  }
  while (scale_ > 0 && mantissa_ % 10 == 0) {
    mantissa_ /= 10;
    --scale_;
  }
}

std::optional<Decimal> Decimal::parse(std::string_view text) {
  if (text.empty()) return std::nullopt;
  bool negative = false;
  if (text.front() == '-' || text.front() == '+') {
    negative = text.front() == '-';
    text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
  }
  std::string_view int_part = text;
  std::string_view frac_part;
  if (auto dot = text.find('.'); dot != std::string_view::npos) {
    int_part = text.substr(0, dot);
    frac_part = text.substr(dot + 1);
    if (frac_part.empty() || frac_part.find('.') != std::string_view::npos) return std::nullopt;
    for (char c : frac_part)
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
  }
  std::string digits;
  if (!read_integer_part(int_part, digits)) return std::nullopt;
  digits += std::string(frac_part);
  if (digits.size() > 17) return std::nullopt;  // keeps int64 arithmetic exact
  std::int64_t mantissa = 0;
  for (char c : digits) mantissa = mantissa * 10 + (c - '0');
  if (negative) mantissa = -mantissa;
  return from_parts(mantissa, static_cast<int>(frac_part.size()));
}

double Decimal::to_double() const {
  return static_cast<double>(mantissa_) / static_cast<double>(pow10_i64(scale_));
}

std::string Decimal::to_string() const {
  std::int64_t m = mantissa_ < 0 ? -mantissa_ : mantissa_;
  std::string digits = std::to_string(m);
  std::string out;
  if (mantissa_ < 0) out.push_back('-');
  if (scale_ == 0) {
    out += digits;
    return out;
  }
  if (digits.size() <= static_cast<std::size_t>(scale_))
    digits.insert(0, static_cast<std::size_t>(scale_) + 1 - digits.size(), '0');
  out += digits.substr(0, digits.size() - scale_);
  out.push_back('.');
  out += digits.substr(digits.size() - scale_);
  return out;
}

Decimal Decimal::operator+(const Decimal& rhs) const {
  int scale = std::max(scale_, rhs.scale_);
  __int128 a = static_cast<__int128>(mantissa_) * pow10_i64(scale - scale_);
  __int128 b = static_cast<__int128>(rhs.mantissa_) * pow10_i64(scale - rhs.scale_);
  __int128 sum = a + b;
  if (sum > std::numeric_limits<std::int64_t>::max() ||
      sum < std::numeric_limits<std::int64_t>::min())
    throw std::overflow_error("decimal arithmetic overflow");
  return from_parts(static_cast<std::int64_t>(sum), scale);
}

Decimal Decimal::operator-(const Decimal& rhs) const { return *this + (-rhs); }

bool Decimal::operator==(const Decimal& rhs) const {
  return mantissa_ == rhs.mantissa_ && scale_ == rhs.scale_;
}

bool Decimal::operator<(const Decimal& rhs) const {
  int scale = std::max(scale_, rhs.scale_);
  __int128 a = static_cast<__int128>(mantissa_) * pow10_i64(scale - scale_);
  __int128 b = static_cast<__int128>(rhs.mantissa_) * pow10_i64(scale - rhs.scale_);
  return a < b;
}

}  // namespace opera
