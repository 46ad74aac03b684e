#pragma once

// Autoregressive generation and yes/no probing over any next-token source.
// A source is any callable `TokenDist(const Context&)`.

#include "coad/core.hpp"

#include <concepts>
#include <string>

namespace coad {

template <class S>
concept NextTokenSource = requires(const S& s, const Context& x) {
  { s(x) } -> std::convertible_to<TokenDist>;
};

enum class DecodeMode { greedy, sample };

struct DecodePolicy {
  DecodeMode mode = DecodeMode::sample;
  double temperature = 0.2;
  std::size_t max_tokens = 512;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (max_tokens < 1) throw ConfigError("decode: max_tokens must be >= 1");
    if (mode == DecodeMode::sample && !(temperature > 0.0)) throw ConfigError("decode: temperature must be > 0");
  }
};

struct Caption {
  std::vector<TokenId> tokens;  // generated tokens, prompt excluded
  std::uint64_t scene_ref = 0;
  std::string source_tag;

  bool operator==(const Caption&) const = default;
};

class SourceError : public Error {
 public:
  SourceError(std::size_t step, const std::string& what)
      : Error("source failed at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class DegenerateProbeError : public Error {
 public:
  using Error::Error;
};

/// Draws from p^(1/T) (renormalized). Zero-probability tokens are never drawn.
inline TokenId sample_token(const TokenDist& p, double temperature, Rng& rng) {
  const std::size_t V = p.size();
  std::vector<double> w(V, 0.0);
  if (temperature == 1.0) {
    w.assign(p.vec().begin(), p.vec().end());
  } else {
    const double log_max = std::log(p[p.argmax()]);
    for (std::size_t i = 0; i < V; ++i) {
      if (p[i] > 0.0) w[i] = std::exp((std::log(p[i]) - log_max) / temperature);
    }
  }
  double total = 0.0;
  for (double v : w) total += v;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < V; ++i) {
    acc += w[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(p.argmax());
}

inline TokenId select_token(const TokenDist& p, const DecodePolicy& policy, Rng& rng) {
  if (policy.mode == DecodeMode::greedy) return static_cast<TokenId>(p.argmax());
  return sample_token(p, policy.temperature, rng);
}

/// Query, select, append; stop at EOS or max_tokens.
template <NextTokenSource Source>
Caption generate(const Scene& scene, Context prompt, const Source& source, const DecodePolicy& policy,
                 const SpecialTokens& special, std::string source_tag = {}) {
  policy.validate();
  if (prompt.empty() || prompt[0] != special.bos) throw DimensionError("prompt must start with BOS");
  Rng rng(policy.rng_seed);
  Caption out;
  out.scene_ref = scene.seed;
  out.source_tag = std::move(source_tag);
  for (std::size_t step = 0; step < policy.max_tokens; ++step) {
    TokenDist p;
    try {
      p = source(prompt);
    } catch (const Error& e) {
      throw SourceError(step, e.what());
    }
    const TokenId y = select_token(p, policy, rng);
    prompt.append(y);
    out.tokens.push_back(y);
    if (y == special.eos) break;
  }
  return out;
}

struct ProbeAnswer {
  bool yes = false;
  double p_yes = 0.0;
};

inline Context probe_prompt(std::size_t category, const Vocab& vocab) {
  const auto& sp = vocab.special();
  return Context{sp.bos, sp.probe, vocab.category_token(category)};
}

/// Yes iff P(YES) > P(NO) at the probe prompt; ties answer no.
template <NextTokenSource Source>
ProbeAnswer answer_probe(std::size_t category, const Source& source, const Vocab& vocab) {
  if (category >= vocab.n_categories()) throw DimensionError("probe category out of range");
  const TokenDist p = source(probe_prompt(category, vocab));
  const double py = p[static_cast<std::size_t>(vocab.special().yes)];
  const double pn = p[static_cast<std::size_t>(vocab.special().no)];
  if (!(py + pn > 0.0)) throw DegenerateProbeError("probe: P(YES) + P(NO) = 0");
  return ProbeAnswer{py > pn, py / (py + pn)};
}

}  // namespace coad
