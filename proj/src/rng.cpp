// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/rng.hpp"

#include <cmath>

namespace alter {

double Rng::next_gauss() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = next_double();
  } while (u1 <= 0.0);
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

uint64_t seed_for(uint64_t base_seed, const std::string& purpose) {
  // FNV-1a over the purpose string, mixed into the base seed.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  Rng mix(base_seed ^ h);
  return mix.next_u64();
}

}  // namespace alter
