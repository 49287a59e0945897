#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace drofolio {

using Engine = std::mt19937_64;

/// Seed of substream `stream` derived from `master` (splitmix64 finalizer).
/// Substreams make Monte Carlo output independent of scheduling.
std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream);

inline Engine make_engine(std::uint64_t master, std::uint64_t stream) {
    return Engine(substream_seed(master, stream));
}

/// Worker count: DROFOLIO_THREADS if set and positive, otherwise the
/// hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Iterations must write to disjoint outputs.
/// The first exception thrown by any iteration is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace drofolio
