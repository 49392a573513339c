#pragma once

#include <cstdint>
#include <random>

namespace longtail {

uint64_t splitmix64(uint64_t x);

// Independent generator for (seed, tag, index); the stream only depends on
// the three keys, never on call order. tag separates purposes (per-class
// data streams, init, shuffling, ...).
std::mt19937_64 make_stream(uint64_t seed, uint64_t tag, uint64_t index = 0);

double uniform(std::mt19937_64& g, double lo, double hi);
double normal(std::mt19937_64& g, double mean = 0.0, double stddev = 1.0);

}  // namespace longtail
