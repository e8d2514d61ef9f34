#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cotforge {

// Content digests for manifests and reproducibility checks (FNV-1a, 64 bit).
class Digest {
public:
    Digest& update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            h_ ^= c;
            h_ *= 0x100000001b3ULL;
        }
        n_ += bytes.size();
        return *this;
    }

    // "fnv1a64:<16 hex>-<byte count>"
    std::string hex() const;

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
    std::uint64_t n_ = 0;
};

std::string digest_of(std::string_view bytes);
std::string digest_file(const std::string& path);  // throws on IO failure

}  // namespace cotforge
