#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace opera {

// Exact decimal number: mantissa * 10^-scale, normalized so that the
// mantissa carries no trailing zeros (scale is minimal). Keeps sign-search
// sums and answer comparison free of binary float artifacts.
class Decimal {
 public:
  Decimal() = default;
  static Decimal from_int(std::int64_t v) { return Decimal(v, 0); }
  static Decimal from_parts(std::int64_t mantissa, int scale);

  // Parses an optionally signed decimal literal. Comma grouping is accepted
  // when it is well formed ("1,000" but not "1,00"); a single fractional
  // point is allowed. Returns nullopt for anything else.
  static std::optional<Decimal> parse(std::string_view text);

  std::int64_t mantissa() const { return mantissa_; }
  int scale() const { return scale_; }
  bool is_zero() const { return mantissa_ == 0; }
  bool is_integer() const { return scale_ == 0; }
  double to_double() const;

  // Integer form when integral ("73"), otherwise minimal fixed-point ("7.5").
  std::string to_string() const;

  Decimal operator+(const Decimal& rhs) const;
  Decimal operator-(const Decimal& rhs) const;
  Decimal operator-() const { return Decimal(-mantissa_, scale_); }
  bool operator==(const Decimal& rhs) const;
  bool operator<(const Decimal& rhs) const;

  Decimal abs() const { return mantissa_ < 0 ? -*this : *this; }

 private:
  Decimal(std::int64_t mantissa, int scale) : mantissa_(mantissa), scale_(scale) {}
  void normalize();

  std::int64_t mantissa_ = 0;
  int scale_ = 0;
};

}  // namespace opera
