#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace cotforge {

// Reads a file line by line, invoking fn(line_number, json) per non-empty
// line. Malformed lines raise DataError-style exceptions with the location.
void for_each_jsonl(const std::string& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn);

std::string read_file(const std::string& path);

// Writes to a sibling temp file then renames, so failures never leave a
// partial output behind.
void atomic_write(const std::string& path, const std::string& content);

}  // namespace cotforge
