#include "cotforge/rng.hpp"

#include <cmath>

namespace cotforge {

double Rng::normal(double mu, double sigma) {
    if (has_spare_) {
        has_spare_ = false;
        return mu + spare_ * sigma;
    }
    // Box-Muller; 1 - u keeps the log argument strictly positive.
    const double u = 1.0 - uniform01();
    const double v = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 6.283185307179586 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mu + r * std::cos(theta) * sigma;
}

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = mix(0x8f1bbcdc9d02c5b5ULL, root);
    for (std::uint64_t p : parts) h = mix(h, p);
    return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                          std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = mix(0x8f1bbcdc9d02c5b5ULL, root);
    for (char c : tag) h = mix(h, static_cast<unsigned char>(c));
    for (std::uint64_t p : parts) h = mix(h, p);
    return h;
}

}  // namespace cotforge
