#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace synseg {

using Rng = std::mt19937_64;

// 64-bit FNV-1a.
uint64_t fnv1a64(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ULL);

// Named sub-stream of a master seed, e.g. make_stream(seed, "init.G1").
// Streams with different names are independent of each other and of the
// order in which they are created.
Rng make_stream(uint64_t seed, std::string_view name);

std::string rng_state(const Rng& rng);
void restore_rng_state(Rng& rng, const std::string& state);

}  // namespace synseg
