#pragma once

// Independent reference computations shared by the test suites. Nothing here
// calls into the library's distribution arithmetic.

#include "coad/coad.hpp"

#include <cmath>
#include <vector>

namespace coad::testing {

inline std::vector<double> ref_softmax(const std::vector<double>& s) {
  double mx = s[0];
  for (double v : s) mx = v > mx ? v : mx;
  std::vector<double> e(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    e[i] = std::exp(s[i] - mx);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

inline double ref_max_diff(const std::vector<double>& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline TokenDist random_dist(std::size_t V, Rng& rng, double zero_prob = 0.0) {
  std::vector<double> v(V);
  double sum = 0.0;
  for (auto& x : v) {
    x = rng.bernoulli(zero_prob) ? 0.0 : rng.uniform() + 1e-3;
    sum += x;
  }
  if (sum == 0.0) v[0] = 1.0;
  return normalize(v);
}

inline Context random_context(const WorldModelSuite& s, Rng& rng, std::size_t max_len = 10) {
  const auto& sp = s.vocab.special();
  Context x{sp.bos};
  const std::size_t len = rng.index(max_len + 1);
  const std::size_t first_content = 5;
  for (std::size_t i = 0; i < len; ++i) {
    x.append(static_cast<TokenId>(first_content + rng.index(s.vocab_size() - first_content)));
  }
  return x;
}

inline Scene scene_of(std::vector<std::uint8_t> z, std::uint64_t seed = 1) { return Scene{std::move(z), seed}; }

/// Three categories (knife, fork, spoon) with a knife -> fork link.
inline WorldConfig knife_fork_world(double strength = 8.0) {
  WorldConfig w = WorldConfig::clean(3, 4, 11);
  w.category_names = {"knife", "fork", "spoon"};
  w.cooccur(0, 1) = strength;
  return w;
}

}  // namespace coad::testing
