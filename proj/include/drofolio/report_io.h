#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace drofolio {

/// Shortest decimal text that parses back to exactly `x`. Non-finite values
/// print as "inf", "-inf" and "nan".
std::string format_double(double x);

/// 64-bit FNV-1a, used to fingerprint the effective configuration of a run.
std::uint64_t fnv1a(std::string_view text);
std::string hex64(std::uint64_t value);

struct Provenance {
    std::string version;
    std::string config_hash;
    std::uint64_t seed = 0;
};

Provenance make_provenance(std::string_view canonical_config, std::uint64_t seed);

std::string library_version();

}  // namespace drofolio
