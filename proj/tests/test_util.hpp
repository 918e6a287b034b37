#pragma once
// Helpers shared by the unit tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "autoddpm/image.hpp"
#include "autoddpm/random.hpp"

namespace testutil {

inline autoddpm::Image random_image(int h, int w, autoddpm::RandomSource& rng, double lo = 0.0, double hi = 1.0) {
  autoddpm::Image img(h, w);
  for (auto& v : img.values()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return img;
}

inline autoddpm::BinaryMask random_mask(int h, int w, autoddpm::RandomSource& rng, double p = 0.3) {
  autoddpm::BinaryMask m(h, w);
  for (auto& v : m.values()) v = rng.uniform() < p ? 1 : 0;
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("autoddpm-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_err(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
