#include "drofolio/report_io.h"

#include <array>
#include <charconv>
#include <cmath>

namespace drofolio {

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (ec != std::errc()) return std::to_string(x);
    return std::string(buf.data(), ptr);
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

Provenance make_provenance(std::string_view canonical_config, std::uint64_t seed) {
    return {library_version(), hex64(fnv1a(canonical_config)), seed};
}

std::string library_version() { return DROFOLIO_VERSION; }

}  // namespace drofolio
