#pragma once

#include <cstdint>
#include <random>

namespace nwt {

/// splitmix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Private random stream of one trajectory. The state depends only on
/// (master seed, stream index), never on which worker draws it.
class RandomStream
{
public:
    using engine_type = std::mt19937_64;

    RandomStream(std::uint64_t master_seed, std::uint64_t index)
        : engine_(splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL)))
    {
    }

    explicit RandomStream(std::uint64_t seed) : RandomStream(seed, 0) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() { return normal_(engine_); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    engine_type& engine() noexcept { return engine_; }

private:
    engine_type engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace nwt
