#include "cotforge/digest.hpp"

#include <fstream>
#include <stdexcept>

namespace cotforge {

std::string Digest::hex() const {
    static const char* k = "0123456789abcdef";
    std::string out = "fnv1a64:";
    for (int i = 60; i >= 0; i -= 4) out.push_back(k[(h_ >> i) & 0xf]);
    out += "-" + std::to_string(n_);
    return out;
}

std::string digest_of(std::string_view bytes) { return Digest().update(bytes).hex(); }

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for digest: " + path);
    Digest d;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        d.update(std::string_view(buf, static_cast<std::size_t>(in.gcount())));
    return d.hex();
}

}  // namespace cotforge
