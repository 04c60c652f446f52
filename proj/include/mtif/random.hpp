#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string_view>

namespace mtif {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Per-stage seed derivation: every pipeline stage draws its randomness from
/// the global seed mixed with the stage name, so one seed reproduces the run.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
    return splitmix64(fnv1a64(stage) ^ global_seed);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Eigen::VectorXd gaussian_vector(int dim, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> normal(0.0, sd);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    return v;
}

/// Uniform draw on the sphere of the given radius (Gaussian direction, rescaled).
inline Eigen::VectorXd sphere_vector(int dim, double radius, std::mt19937_64& rng) {
    Eigen::VectorXd v = gaussian_vector(dim, rng);
    double n = v.norm();
    while (n == 0.0) {
        v = gaussian_vector(dim, rng);
        n = v.norm();
    }
    return v * (radius / n);
}

}  // namespace mtif
