#include "cotforge/vocab.hpp"

#include "cotforge/corpus.hpp"

namespace cotforge {

Vocab Vocab::standard() {
    Vocab v;
    v.tokens_ = {"<eos>", "<unk>", "\n"};
    for (int c = 32; c <= 126; ++c) v.tokens_.push_back(std::string(1, static_cast<char>(c)));
    for (int i = 0; i < 256; ++i) v.char_to_id_[i] = v.unk_id();
    v.char_to_id_[static_cast<unsigned char>('\n')] = v.newline_id();
    for (std::size_t i = 3; i < v.tokens_.size(); ++i)
        v.char_to_id_[static_cast<unsigned char>(v.tokens_[i][0])] = static_cast<int>(i);
    return v;
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(char_to_id_[c]);
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        const char c = decode_char(id);
        if (c) out.push_back(c);
    }
    return out;
}

char Vocab::decode_char(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
    if (id == eos_id()) return '\0';
    if (id == unk_id()) return '?';
    return tokens_[static_cast<std::size_t>(id)][0];
}

nlohmann::json Vocab::to_json() const { return tokens_; }

Vocab Vocab::from_json(const nlohmann::json& j) {
    Vocab expected = standard();
    const auto tokens = j.get<std::vector<std::string>>();
    if (tokens != expected.tokens_) throw DataError("unsupported vocabulary layout");
    return expected;
}

}  // namespace cotforge
