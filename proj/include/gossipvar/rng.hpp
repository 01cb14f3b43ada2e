#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gossipvar {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Independent stream keyed by (master seed, node id, purpose). Streams do not
/// depend on the order in which nodes are visited.
inline Rng substream(std::uint64_t master_seed, std::uint64_t node, std::string_view purpose) {
    std::uint64_t h = detail::splitmix64(master_seed);
    h = detail::splitmix64(h ^ detail::splitmix64(node + 0x51ed270b27a5e4c3ULL));
    h = detail::splitmix64(h ^ detail::fnv1a(purpose));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return Rng(seq);
}

}  // namespace gossipvar
