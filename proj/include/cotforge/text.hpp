#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotforge/rational.hpp"

namespace cotforge {

std::string trim(std::string_view s);

// Removes every balanced "<<...>>" calculator annotation. An unmatched "<<"
// is left in place and reported through *unbalanced when given. Idempotent.
std::string strip_annotations(std::string_view text, bool* unbalanced = nullptr);

// Splits a rationale into sentence steps: line breaks first, then ". "
// boundaries that are not inside a decimal number. Fragments are trimmed,
// empties dropped, terminal punctuation kept. Throws on an empty rationale.
std::vector<std::string> split_steps(std::string_view rationale);

bool has_digit(std::string_view s);

// Last value following a "The solution to the problem is" or "####" marker,
// else the last standalone number in the text.
std::optional<Rational> extract_number(std::string_view text);

// Last standalone A-E token ("C", "C.", "(C)" all count).
std::optional<char> extract_letter(std::string_view text);

}  // namespace cotforge
