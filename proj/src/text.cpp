#include "cotforge/text.hpp"

#include <cctype>
#include <stdexcept>

namespace cotforge {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string strip_annotations(std::string_view text, bool* unbalanced) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '<' && i + 1 < text.size() && text[i + 1] == '<') {
            const std::size_t close = text.find(">>", i + 2);
            if (close == std::string_view::npos) {
                if (unbalanced) *unbalanced = true;
                out += "<<";
                i += 2;
            } else {
                i = close + 2;
            }
        } else {
            out.push_back(text[i]);
            ++i;
        }
    }
    return out;
}

namespace {

// '.' followed by whitespace ends a sentence unless it sits between digits
// ("3. 50" style split decimals stay together; "3.50" has no space and is
// never a candidate).
void split_sentences(std::string_view line, std::vector<std::string>& out) {
    std::size_t start = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] != '.' || i + 1 >= line.size()) continue;
        std::size_t j = i + 1;
        while (j < line.size() && (line[j] == ' ' || line[j] == '\t')) ++j;
        if (j == i + 1) continue;  // no whitespace after the period
        const bool digit_before = i > 0 && is_digit(line[i - 1]);
        const bool digit_after = j < line.size() && is_digit(line[j]);
        if (digit_before && digit_after) continue;
        std::string frag = trim(line.substr(start, i + 1 - start));
        if (!frag.empty()) out.push_back(std::move(frag));
        start = j;
    }
    std::string tail = trim(line.substr(start));
    if (!tail.empty()) out.push_back(std::move(tail));
}

}  // namespace

std::vector<std::string> split_steps(std::string_view rationale) {
    std::vector<std::string> steps;
    std::size_t pos = 0;
    while (pos <= rationale.size()) {
        std::size_t nl = rationale.find('\n', pos);
        if (nl == std::string_view::npos) nl = rationale.size();
        split_sentences(rationale.substr(pos, nl - pos), steps);
        pos = nl + 1;
    }
    if (steps.empty()) throw std::runtime_error("empty rationale");
    return steps;
}

bool has_digit(std::string_view s) {
    for (char c : s)
        if (is_digit(c)) return true;
    return false;
}

namespace {

// Maximal numeric token starting at or after `from`: digits with optional
// internal commas/decimal point and optional leading sign.
std::optional<Rational> number_at(std::string_view text, std::size_t from) {
    std::size_t i = from;
    while (i < text.size() && (text[i] == ' ' || text[i] == ':' || text[i] == '$')) ++i;
    std::size_t start = i;
    if (i < text.size() && (text[i] == '-' || text[i] == '+')) ++i;
    if (i >= text.size() || !is_digit(text[i])) return std::nullopt;
    while (i < text.size()) {
        if (is_digit(text[i])) {
            ++i;
        } else if ((text[i] == ',' || text[i] == '.') && i + 1 < text.size() &&
                   is_digit(text[i + 1])) {
            ++i;
        } else {
            break;
        }
    }
    return parse_rational(text.substr(start, i - start));
}

std::size_t rfind_marker(std::string_view text, std::string_view marker) {
    return text.rfind(marker);
}

}  // namespace

std::optional<Rational> extract_number(std::string_view text) {
    const std::size_t sol = rfind_marker(text, "The solution to the problem is");
    const std::size_t hash = rfind_marker(text, "####");
    std::size_t marker_end = std::string_view::npos;
    if (sol != std::string_view::npos && (hash == std::string_view::npos || sol > hash))
        marker_end = sol + 30;
    else if (hash != std::string_view::npos)
        marker_end = hash + 4;

    if (marker_end != std::string_view::npos) {
        if (auto r = number_at(text, marker_end)) return r;
    }

    // fallback: last standalone number
    std::optional<Rational> last;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        std::size_t start = i;
        if (start > 0 && (text[start - 1] == '-' || text[start - 1] == '+') &&
            (start == 1 || !is_alnum(text[start - 2])))
            --start;
        if (start > 0 && is_alnum(text[start - 1])) {  // embedded in a word
            while (i < text.size() && is_alnum(text[i])) ++i;
            continue;
        }
        std::size_t end = i;
        while (end < text.size()) {
            if (is_digit(text[end])) {
                ++end;
            } else if ((text[end] == ',' || text[end] == '.') && end + 1 < text.size() &&
                       is_digit(text[end + 1])) {
                ++end;
            } else {
                break;
            }
        }
        if (end >= text.size() || !is_alnum(text[end])) {
            if (auto r = parse_rational(text.substr(start, end - start))) last = r;
        }
        i = end + 1;
    }
    return last;
}

std::optional<char> extract_letter(std::string_view text) {
    std::optional<char> last;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c < 'A' || c > 'E') continue;
        const bool left_ok = i == 0 || !is_alnum(text[i - 1]);
        const bool right_ok = i + 1 >= text.size() || !is_alnum(text[i + 1]);
        if (left_ok && right_ok) last = c;
    }
    return last;
}

}  // namespace cotforge
