#include "cotforge/rational.hpp"

#include <cctype>
#include <cstdlib>
#include <numeric>

namespace cotforge {

Rational::Rational(std::int64_t n, std::int64_t d) {
    if (d == 0) throw std::invalid_argument("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
    num = g ? n / g : n;
    den = g ? d / g : d;
}

std::string Rational::str() const {
    if (den == 1) return std::to_string(num);
    // Render finite decimals exactly; otherwise fall back to num/den.
    std::int64_t d = den;
    int twos = 0, fives = 0;
    while (d % 2 == 0) {
        d /= 2;
        ++twos;
    }
    while (d % 5 == 0) {
        d /= 5;
        ++fives;
    }
    if (d != 1) return std::to_string(num) + "/" + std::to_string(den);
    int digits = twos > fives ? twos : fives;
    std::int64_t scale = 1;
    for (int i = 0; i < digits; ++i) scale *= 10;
    const std::int64_t scaled = num * (scale / den);
    const bool neg = scaled < 0;
    std::string body = std::to_string(neg ? -scaled : scaled);
    while (static_cast<int>(body.size()) <= digits) body.insert(body.begin(), '0');
    body.insert(body.end() - digits, '.');
    return (neg ? "-" : "") + body;
}

std::optional<Rational> parse_rational(std::string_view text) {
    std::size_t i = 0, j = text.size();
    while (i < j && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (j > i && std::isspace(static_cast<unsigned char>(text[j - 1]))) --j;
    if (j > i && text[j - 1] == '.') --j;  // trailing sentence period
    if (i >= j) return std::nullopt;

    bool neg = false;
    if (text[i] == '+' || text[i] == '-') {
        neg = text[i] == '-';
        ++i;
    }
    if (i >= j) return std::nullopt;

    std::int64_t intpart = 0, fracpart = 0, fracscale = 1;
    bool any_digit = false, seen_dot = false;
    for (; i < j; ++i) {
        const char c = text[i];
        if (c >= '0' && c <= '9') {
            any_digit = true;
            if (!seen_dot) {
                if (intpart > (INT64_MAX - 9) / 10) return std::nullopt;
                intpart = intpart * 10 + (c - '0');
            } else {
                if (fracscale > INT64_MAX / 10) return std::nullopt;
                fracpart = fracpart * 10 + (c - '0');
                fracscale *= 10;
            }
        } else if (c == ',' && !seen_dot) {
            // thousands separator: exactly three digits follow each comma
            if (!any_digit) return std::nullopt;
            std::size_t run = 0;
            while (i + 1 + run < j && std::isdigit(static_cast<unsigned char>(text[i + 1 + run])))
                ++run;
            if (run != 3) return std::nullopt;
        } else if (c == '.' && !seen_dot) {
            seen_dot = true;
        } else {
            return std::nullopt;
        }
    }
    if (!any_digit) return std::nullopt;

    if (intpart > INT64_MAX / fracscale) return std::nullopt;
    std::int64_t n = intpart * fracscale + fracpart;
    if (neg) n = -n;
    return Rational(n, fracscale);
}

}  // namespace cotforge
