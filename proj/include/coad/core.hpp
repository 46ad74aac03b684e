#pragma once

// Shared domain types and distribution arithmetic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace coad {

// ============================================================================
// Errors
// ============================================================================

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kProbSumTolerance = 1e-9;
inline constexpr double kDefaultLogFloor = 1e-12;

using TokenId = std::int32_t;

// ============================================================================
// Small dense matrix
// ============================================================================

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

// ============================================================================
// Seeded randomness
// ============================================================================

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derive an independent stream seed from a parent seed, a component tag and an index.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index = 0) {
  return splitmix64(splitmix64(parent ^ fnv1a(tag)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// ============================================================================
// Vocabulary
// ============================================================================

struct SpecialTokens {
  TokenId bos = 0;
  TokenId eos = 1;
  TokenId yes = 2;
  TokenId no = 3;
  TokenId probe = 4;
};

/// Word-level vocabulary shared by every model: specials, one naming token per
/// object category, then filler tokens.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(const std::vector<std::string>& category_names, std::size_t n_fillers) {
    Vocab v;
    v.tokens_ = {"<bos>", "<eos>", "<yes>", "<no>", "<probe>"};
    v.special_ = SpecialTokens{0, 1, 2, 3, 4};
    for (const auto& name : category_names) {
      v.category_token_.push_back(static_cast<TokenId>(v.tokens_.size()));
      v.tokens_.push_back(name);
    }
    for (std::size_t f = 0; f < n_fillers; ++f) {
      v.tokens_.push_back("w" + std::to_string(f));
    }
    v.object_of_.assign(v.tokens_.size(), std::nullopt);
    for (std::size_t c = 0; c < v.category_token_.size(); ++c) {
      v.object_of_[static_cast<std::size_t>(v.category_token_[c])] = c;
    }
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
      if (!v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
        throw ConfigError("duplicate token name: " + v.tokens_[i]);
      }
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t n_categories() const { return category_token_.size(); }
  const SpecialTokens& special() const { return special_; }

  const std::string& name(TokenId t) const { return tokens_.at(static_cast<std::size_t>(t)); }
  const std::vector<std::string>& names() const { return tokens_; }

  std::optional<TokenId> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Category named by token t, if it is an object-naming token.
  std::optional<std::size_t> category_of(TokenId t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= object_of_.size()) return std::nullopt;
    return object_of_[static_cast<std::size_t>(t)];
  }

  TokenId category_token(std::size_t c) const { return category_token_.at(c); }
  const std::string& category_name(std::size_t c) const { return name(category_token(c)); }

  bool valid(TokenId t) const { return t >= 0 && static_cast<std::size_t>(t) < tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::optional<std::size_t>> object_of_;
  std::vector<TokenId> category_token_;
  SpecialTokens special_;
};

// ============================================================================
// Scene, context, object vectors
// ============================================================================

/// Image analog: ground-truth object presence plus a scene identity.
struct Scene {
  std::vector<std::uint8_t> z_star;
  std::uint64_t seed = 0;

  std::size_t n_categories() const { return z_star.size(); }
  bool present(std::size_t c) const { return z_star.at(c) != 0; }
  bool operator==(const Scene&) const = default;
};

/// Prompt plus generated tokens. Grows only by appending.
class Context {
 public:
  Context() = default;
  Context(std::initializer_list<TokenId> tokens) : tokens_(tokens) {}
  explicit Context(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {}

  void append(TokenId t) { tokens_.push_back(t); }

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  TokenId back() const { return tokens_.back(); }
  TokenId operator[](std::size_t i) const { return tokens_[i]; }
  std::span<const TokenId> tokens() const { return tokens_; }

  bool operator==(const Context&) const = default;

 private:
  std::vector<TokenId> tokens_;
};

/// Binary object presence vector.
struct ObjectVector {
  std::vector<std::uint8_t> z;

  std::size_t size() const { return z.size(); }

  std::vector<double> as_reals() const { return {z.begin(), z.end()}; }

  /// Bitmask encoding, bit c set when category c is present. Requires size() <= 64.
  std::uint64_t mask() const {
    std::uint64_t m = 0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      if (z[c]) m |= (std::uint64_t{1} << c);
    }
    return m;
  }

  static ObjectVector from_mask(std::uint64_t m, std::size_t n) {
    ObjectVector v;
    v.z.resize(n);
    for (std::size_t c = 0; c < n; ++c) v.z[c] = static_cast<std::uint8_t>((m >> c) & 1U);
    return v;
  }

  bool operator==(const ObjectVector&) const = default;
};

/// Detector output: per-category presence probabilities in [0, 1].
struct ObjectBelief {
  std::vector<double> z_tilde;

  ObjectBelief() = default;
  explicit ObjectBelief(std::vector<double> v) : z_tilde(std::move(v)) {
    for (double p : z_tilde) {
      if (!(p >= 0.0 && p <= 1.0)) throw NumericError("object belief entry outside [0,1]");
    }
  }

  std::size_t size() const { return z_tilde.size(); }
  bool binary() const {
    return std::all_of(z_tilde.begin(), z_tilde.end(), [](double p) { return p == 0.0 || p == 1.0; });
  }

  bool operator==(const ObjectBelief&) const = default;
};

// ============================================================================
// Distributions
// ============================================================================

/// Probability vector over the vocabulary. Entries >= 0, sum within 1e-9 of 1.
class TokenDist {
 public:
  TokenDist() = default;

  explicit TokenDist(std::vector<double> p) : p_(std::move(p)) {
    double sum = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("token distribution has negative or non-finite entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance) {
      throw NumericError("token distribution sums to " + std::to_string(sum));
    }
  }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> probs() const { return p_; }
  const std::vector<double>& vec() const { return p_; }

  /// Index of the largest entry; ties go to the lowest index.
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(p_.begin(), p_.end()) - p_.begin());
  }

  bool operator==(const TokenDist&) const = default;

 private:
  std::vector<double> p_;
};

/// Unnormalized finite scores over the vocabulary.
class LogitVec {
 public:
  LogitVec() = default;
  explicit LogitVec(std::vector<double> s) : s_(std::move(s)) {
    for (double v : s_) {
      if (!std::isfinite(v)) throw NumericError("non-finite logit");
    }
  }

  std::size_t size() const { return s_.size(); }
  double operator[](std::size_t i) const { return s_[i]; }
  std::span<const double> scores() const { return s_; }
  const std::vector<double>& vec() const { return s_; }

 private:
  std::vector<double> s_;
};

inline TokenDist normalize(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw NumericError("normalize: negative or non-finite entry");
    sum += x;
  }
  if (!(sum > 0.0)) throw DegenerateDistributionError("normalize: all-zero input");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / sum;
  return TokenDist(std::move(out));
}

inline TokenDist normalize(const std::vector<double>& v) { return normalize(std::span<const double>(v)); }

inline LogitVec logits_from_probs(const TokenDist& p, double floor = kDefaultLogFloor) {
  if (!(floor > 0.0)) throw NumericError("logits_from_probs: floor must be positive");
  std::vector<double> s(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) s[i] = std::log(std::max(p[i], floor));
  return LogitVec(std::move(s));
}

/// Softmax of raw scores. Max-shifted so that adding a constant is exact up to rounding.
inline TokenDist softmax(std::span<const double> s, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw NumericError("temperature must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite score");
    mx = std::max(mx, v);
  }
  std::vector<double> out(s.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp((s[i] - mx) / temperature);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return TokenDist(std::move(out));
}

inline TokenDist probs_from_logits(const LogitVec& s, double temperature = 1.0) {
  return softmax(s.scores(), temperature);
}

/// Convex combination w * a + (1 - w) * b.
inline TokenDist mix(const TokenDist& a, const TokenDist& b, double w) {
  if (a.size() != b.size()) throw DimensionError("mix: vocabulary size mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = w * a[i] + (1.0 - w) * b[i];
  return TokenDist(std::move(out));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const TokenDist& a, const TokenDist& b) { return max_abs_diff(a.probs(), b.probs()); }

}  // namespace coad
