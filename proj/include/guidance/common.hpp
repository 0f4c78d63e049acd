/* Copyright 2026 The guidance authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace guidance {

// Validation failures (bad config, bad shapes, bad values) throw
// std::invalid_argument; runtime failures throw std::runtime_error.
// The CLI maps the former to exit code 2 and the latter to exit code 1.
inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Dense row-major image, values in [0,1].
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;  // size c*h*w

  Image() = default;
  Image(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  double& at(int ch, int y, int x) { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
};

// Dense row-major 2-d grid of doubles (masks, attribution values).
struct Grid {
  int h = 0, w = 0;
  std::vector<double> v;  // size h*w

  Grid() = default;
  Grid(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  double sum() const {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
};

// 64-bit FNV-1a, used for content hashes in dataset manifests and for
// parameter-state fingerprints. Stable across runs by construction.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 1469598103934665603ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

// SplitMix64; used to derive independent substreams from (seed, index) pairs
// so that per-item randomness does not depend on processing order.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 substream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = mix64(seed ^ mix64(a ^ mix64(b ^ mix64(c))));
  return std::mt19937_64(s);
}

}  // namespace guidance
