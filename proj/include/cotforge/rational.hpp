#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cotforge {

// Exact rational arithmetic for answer values. GSM8K answers are integers
// (sometimes with thousands separators), AQuA answers are option indices,
// and synthetic answers are integers, but rationale text can carry decimals
// like "3.50" that must compare exactly.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;  // always > 0, gcd(num, den) == 1

    Rational() = default;
    Rational(std::int64_t n) : num(n), den(1) {}
    Rational(std::int64_t n, std::int64_t d);

    bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
    bool operator!=(const Rational& o) const { return !(*this == o); }

    bool is_integer() const { return den == 1; }

    // "72", "7/2", or a finite decimal like "3.5" when the denominator is 2^a*5^b.
    std::string str() const;
};

// Parses a numeric literal: optional sign, digits with optional thousands
// commas, optional decimal part. Leading/trailing whitespace and a trailing
// period are tolerated ("200." -> 200). Returns nullopt on anything else.
std::optional<Rational> parse_rational(std::string_view text);

}  // namespace cotforge
