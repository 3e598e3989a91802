#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace otasizer {

/// Fisher-Yates on raw mt19937_64 output, so the permutation does not depend
/// on the standard library's distribution implementations.
template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

} // namespace otasizer
