#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace modgrow {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a path of indices,
/// e.g. derive_seed(seed, {epoch, batch}).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept
{
    std::uint64_t s = mix64(base);
    for (auto p : path) {
        s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
    }
    return s;
}

// Stream tags so that different consumers of one run seed never collide.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t grow = 2;
inline constexpr std::uint64_t train_batch = 3;
inline constexpr std::uint64_t eval = 4;
inline constexpr std::uint64_t perturb = 5;
inline constexpr std::uint64_t timescale_drive = 6;
inline constexpr std::uint64_t probe = 7;
}  // namespace stream

}  // namespace modgrow
