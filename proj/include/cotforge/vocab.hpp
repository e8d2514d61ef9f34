#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace cotforge {

// Fixed character vocabulary: a dedicated EOS token (also the sequence
// anchor), a reserved unknown token, newline, then printable ASCII.
class Vocab {
public:
    static Vocab standard();

    int size() const { return static_cast<int>(tokens_.size()); }
    int eos_id() const { return 0; }
    int unk_id() const { return 1; }
    int newline_id() const { return 2; }

    std::vector<int> encode(std::string_view text) const;
    // EOS contributes nothing, unknown decodes to the replacement glyph '?'.
    std::string decode(const std::vector<int>& ids) const;
    char decode_char(int id) const;

    nlohmann::json to_json() const;
    static Vocab from_json(const nlohmann::json& j);

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    int char_to_id_[256] = {};
};

}  // namespace cotforge
