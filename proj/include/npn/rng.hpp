#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "npn/tensor.hpp"

namespace npn {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Stable per-module seed derivation: every random stream in a run is keyed
/// by (run seed, stream name), so adding a consumer never perturbs others.
inline uint64_t derive_seed(uint64_t run_seed, std::string_view stream) {
    return splitmix64(run_seed ^ fnv1a64(stream));
}

inline uint64_t derive_seed(uint64_t run_seed, std::string_view stream, uint64_t index) {
    return splitmix64(derive_seed(run_seed, stream) ^ splitmix64(index));
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

inline Tensor uniform_tensor(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

/// Xavier-style uniform init for a (fan_out x fan_in) projection.
inline Tensor glorot_tensor(std::vector<int> shape, std::mt19937_64& rng) {
    long long fan_in = shape.size() >= 2 ? shape.back() : shape[0];
    long long fan_out = shape.size() >= 2 ? shape[0] : shape[0];
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_tensor(std::move(shape), -bound, bound, rng);
}

}  // namespace npn
