#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace fedgen {

/// Network parameters and activations. Reductions, schedules and metrics use double.
using Real = float;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using Rng = std::mt19937_64;

struct ImageShape {
    int channels = 1;
    int height = 0;
    int width = 0;

    int pixels() const { return height * width; }
    int size() const { return channels * height * width; }
    bool operator==(const ImageShape&) const = default;
};

/// Mixes a master seed with a path of stream identifiers (splitmix64 finalizer),
/// so every consumer of randomness gets an independent, reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(master);
    for (auto p : path) h = mix(h ^ mix(p));
    return h;
}

} // namespace fedgen
