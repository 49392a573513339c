#include "longtail/rng.hpp"

namespace longtail {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_stream(uint64_t seed, uint64_t tag, uint64_t index) {
  uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ (tag * 0x9e3779b97f4a7c15ULL));
  s = splitmix64(s ^ (index * 0xc2b2ae3d27d4eb4fULL));
  return std::mt19937_64(s);
}

double uniform(std::mt19937_64& g, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(g);
}

double normal(std::mt19937_64& g, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(g);
}

}  // namespace longtail
