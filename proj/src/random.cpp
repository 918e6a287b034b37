#include "autoddpm/random.hpp"

#include <sstream>

namespace autoddpm {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string RandomSource::state() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void RandomSource::restore(const std::string& state) {
  std::istringstream is(state);
  is >> seed_ >> engine_ >> normal_ >> uniform_;
}

std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (const auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

std::uint64_t hash_string(const std::string& s) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace autoddpm
