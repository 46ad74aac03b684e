#pragma once

// Causal decoding core. The next-token distribution is
//
//   (1 + alpha) * sum_z P(z | S) * P_f(y | S, x, z)  -  alpha * P_p(y | S, x)
//
// with P(z | S) the product-Bernoulli measure given by the detector belief.
// The z-sum is computed exactly, by Monte Carlo, or by feeding the soft belief
// into the finetuned model. The combination runs either on probabilities
// (clamped and renormalized) or on log-probabilities followed by a softmax.

#include "coad/worldsim.hpp"

#include <string>

namespace coad {

class EnumerationLimitError : public Error {
 public:
  using Error::Error;
};

class DegenerateFusionError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kMaxExactCategories = 16;

enum class MarginalMode { exact, monte_carlo, soft };
enum class FusionSpace { probability, logit };

inline const char* to_string(MarginalMode m) {
  switch (m) {
    case MarginalMode::exact: return "exact";
    case MarginalMode::monte_carlo: return "monte_carlo";
    case MarginalMode::soft: return "soft";
  }
  return "?";
}

inline const char* to_string(FusionSpace s) { return s == FusionSpace::probability ? "probability" : "logit"; }

struct FusionConfig {
  double alpha = 1.5;
  MarginalMode marginal_mode = MarginalMode::soft;
  std::size_t mc_samples = 16;
  FusionSpace space = FusionSpace::logit;
  double clamp_floor = 0.0;
  double logit_floor = kDefaultLogFloor;
  std::uint64_t rng_seed = 0;

  void validate(std::size_t n_categories) const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("fusion: alpha must be >= 0");
    if (marginal_mode == MarginalMode::exact && n_categories > kMaxExactCategories) {
      throw ConfigError("fusion: exact marginalization needs C <= 16");
    }
    if (marginal_mode == MarginalMode::monte_carlo && mc_samples < 1) throw ConfigError("fusion: mc_samples must be >= 1");
    if (!(clamp_floor >= 0.0)) throw ConfigError("fusion: clamp_floor must be >= 0");
    if (!(logit_floor > 0.0)) throw ConfigError("fusion: logit_floor must be > 0");
  }
};

/// Mixing ratio that inverts a point-mass gamma exactly.
inline double inversion_alpha(double gamma) { return (1.0 - gamma) / gamma; }

// ============================================================================
// Marginalization over z
// ============================================================================

/// Sum over all 2^C binary z of prod_c Bernoulli(z_c; belief_c) * P_f(y | x, S, z).
/// Outcomes with zero mass are skipped.
template <class Finetuned>
TokenDist marginal_finetuned_exact(const Context& x, const Scene& scene, const ObjectBelief& belief, const Finetuned& mf,
                                   const TokenDist* pretrained = nullptr) {
  const std::size_t C = belief.size();
  if (C > kMaxExactCategories) {
    throw EnumerationLimitError("exact marginalization over " + std::to_string(C) + " categories exceeds the limit of 16");
  }
  std::vector<double> acc;
  std::vector<double> z(C);
  const std::uint64_t n_outcomes = std::uint64_t{1} << C;
  for (std::uint64_t mask = 0; mask < n_outcomes; ++mask) {
    double w = 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      const bool on = (mask >> c) & 1U;
      z[c] = on ? 1.0 : 0.0;
      w *= on ? belief.z_tilde[c] : 1.0 - belief.z_tilde[c];
    }
    if (w == 0.0) continue;
    const TokenDist p = mf(x, scene, std::span<const double>(z), pretrained);
    if (acc.empty()) acc.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) acc[i] += w * p[i];
  }
  return normalize(acc);
}

/// (1/N) sum_i P_f(y | x, S, z_i) with z_i ~ Bernoulli(belief).
template <class Finetuned>
TokenDist marginal_finetuned_mc(const Context& x, const Scene& scene, const ObjectBelief& belief, std::size_t n_samples,
                                Rng& rng, const Finetuned& mf, const TokenDist* pretrained = nullptr) {
  if (n_samples < 1) throw ConfigError("monte carlo marginalization needs N >= 1");
  std::vector<double> acc;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto z = sample_z(belief, rng).as_reals();
    const TokenDist p = mf(x, scene, std::span<const double>(z), pretrained);
    if (acc.empty()) acc.assign(p.size(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) acc[j] += p[j];
  }
  for (double& v : acc) v /= static_cast<double>(n_samples);
  return normalize(acc);
}

/// Feeds the belief vector itself as z.
template <class Finetuned>
TokenDist marginal_finetuned_soft(const Context& x, const Scene& scene, const ObjectBelief& belief, const Finetuned& mf,
                                  const TokenDist* pretrained = nullptr) {
  return mf(x, scene, std::span<const double>(belief.z_tilde), pretrained);
}

inline TokenDist marginal_finetuned_exact(const Context& x, const Scene& scene, const ObjectBelief& belief,
                                          const WorldModelSuite& suite) {
  return marginal_finetuned_exact(x, scene, belief, ConstructedFinetuned{&suite});
}

inline TokenDist marginal_finetuned_mc(const Context& x, const Scene& scene, const ObjectBelief& belief,
                                       std::size_t n_samples, Rng& rng, const WorldModelSuite& suite) {
  return marginal_finetuned_mc(x, scene, belief, n_samples, rng, ConstructedFinetuned{&suite});
}

inline TokenDist marginal_finetuned_soft(const Context& x, const Scene& scene, const ObjectBelief& belief,
                                         const WorldModelSuite& suite) {
  return marginal_finetuned_soft(x, scene, belief, ConstructedFinetuned{&suite});
}

// ============================================================================
// Contrast
// ============================================================================

/// Logit-space combination (1 + alpha) * s_f - alpha * s_p followed by softmax.
inline TokenDist contrast_logits(const LogitVec& finetuned, const LogitVec& pretrained, double alpha) {
  if (finetuned.size() != pretrained.size()) throw DimensionError("contrast: vocabulary size mismatch");
  std::vector<double> s(finetuned.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = (1.0 + alpha) * finetuned[i] - alpha * pretrained[i];
  return softmax(s);
}

inline TokenDist contrast(const TokenDist& marginal, const TokenDist& pretrained, const FusionConfig& config) {
  if (marginal.size() != pretrained.size()) throw DimensionError("contrast: vocabulary size mismatch");
  const double a = config.alpha;
  if (a == 0.0) return marginal;
  if (config.space == FusionSpace::logit) {
    return contrast_logits(logits_from_probs(marginal, config.logit_floor), logits_from_probs(pretrained, config.logit_floor),
                           a);
  }
  std::vector<double> raw(marginal.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = std::max((1.0 + a) * marginal[i] - a * pretrained[i], config.clamp_floor);
    sum += raw[i];
  }
  if (!(sum > 0.0)) throw DegenerateFusionError("probability-space fusion left no positive mass");
  return normalize(raw);
}

// ============================================================================
// Full pipeline
// ============================================================================

namespace detail {

inline std::string describe_context(const Context& x) {
  std::string out = "[";
  for (std::size_t i = 0; i < x.size(); ++i) out += (i ? "," : "") + std::to_string(x[i]);
  return out + "]";
}

}  // namespace detail

/// Per-step MC stream: a function of (config seed, scene, context length), so
/// every source decoding the same scene sees the same z samples at each position.
inline Rng mc_stream(const FusionConfig& config, const Scene& scene, const Context& x) {
  return Rng(derive_seed(derive_seed(config.rng_seed, "mc", scene.seed), "step", x.size()));
}

/// Dispatches on the configured mode. `rng` is only read in Monte Carlo mode
/// and may be null otherwise.
template <class Finetuned>
TokenDist marginal_finetuned(const Context& x, const Scene& scene, const ObjectBelief& belief, const Finetuned& mf,
                             const FusionConfig& config, Rng* rng, const TokenDist* pretrained = nullptr) {
  switch (config.marginal_mode) {
    case MarginalMode::exact: return marginal_finetuned_exact(x, scene, belief, mf, pretrained);
    case MarginalMode::monte_carlo:
      if (!rng) throw ConfigError("monte carlo marginalization needs a random stream");
      return marginal_finetuned_mc(x, scene, belief, config.mc_samples, *rng, mf, pretrained);
    case MarginalMode::soft: return marginal_finetuned_soft(x, scene, belief, mf, pretrained);
  }
  throw ConfigError("unknown marginal mode");
}

struct FusionStep {
  TokenDist pretrained;
  TokenDist marginal;
  TokenDist fused;
};

template <class Finetuned>
FusionStep coad_step(const Context& x, const Scene& scene, const ObjectBelief& belief, const WorldModelSuite& suite,
                     const Finetuned& mf, const FusionConfig& config, Rng* rng) {
  TokenDist pretrained = pretrained_next(x, scene, suite);
  TokenDist marginal = marginal_finetuned(x, scene, belief, mf, config, rng, &pretrained);
  try {
    TokenDist fused = contrast(marginal, pretrained, config);
    return FusionStep{std::move(pretrained), std::move(marginal), std::move(fused)};
  } catch (const DegenerateFusionError& e) {
    throw DegenerateFusionError(std::string(e.what()) + " at context " + detail::describe_context(x));
  }
}

/// Next-token distribution for a scene whose detector belief was computed once up front.
inline TokenDist coad_next_token(const Context& x, const Scene& scene, const ObjectBelief& belief,
                                 const WorldModelSuite& suite, const FusionConfig& config, Rng& rng) {
  return coad_step(x, scene, belief, suite, ConstructedFinetuned{&suite}, config, &rng).fused;
}

/// Contrast for a finetuned model that never receives z.
template <class FinetunedNoZ>
TokenDist coad_without_z_next(const Context& x, const Scene& scene, const WorldModelSuite& suite, const FinetunedNoZ& mf,
                              const FusionConfig& config) {
  TokenDist pretrained = pretrained_next(x, scene, suite);
  return contrast(mf(x, scene, &pretrained), pretrained, config);
}

/// One scene's decoding state: the detector belief is fixed at construction and
/// shared by every context queried afterwards.
template <class Finetuned = ConstructedFinetuned>
class CoadSession {
 public:
  CoadSession(const WorldModelSuite& suite, Scene scene, ObjectBelief belief, FusionConfig config, Finetuned mf)
      : suite_(&suite), scene_(std::move(scene)), belief_(std::move(belief)), config_(config), mf_(mf) {
    if (belief_.size() != suite.n_categories()) throw DimensionError("belief length != C");
    config_.validate(suite.n_categories());
  }

  FusionStep step(const Context& x) const {
    auto rng = stream(x);
    return coad_step(x, scene_, belief_, *suite_, mf_, config_, rng ? &*rng : nullptr);
  }

  TokenDist next(const Context& x) const { return step(x).fused; }

  /// Finetuned marginal alone, no contrast.
  TokenDist marginal(const Context& x) const {
    auto rng = stream(x);
    return marginal_finetuned(x, scene_, belief_, mf_, config_, rng ? &*rng : nullptr);
  }

  const ObjectBelief& belief() const { return belief_; }
  const Scene& scene() const { return scene_; }
  const FusionConfig& config() const { return config_; }

 private:
  std::optional<Rng> stream(const Context& x) const {
    if (config_.marginal_mode != MarginalMode::monte_carlo) return std::nullopt;
    return mc_stream(config_, scene_, x);
  }

  const WorldModelSuite* suite_;
  Scene scene_;
  ObjectBelief belief_;
  FusionConfig config_;
  Finetuned mf_;
};

}  // namespace coad
