#pragma once

// Synthetic multimodal world.
//
// Every model is a softmax over scores
//
//   score(x, y) = b(x, y) + sum_c z_c * w_c,y(x)
//
// where b(x, y) is shared between the oracle and the pretrained model and
// depends on the last markov_k tokens, the set of categories mentioned so far
// and the caption length. Object tokens carry a large negative base score that
// the conditioning weight cancels exactly when z_c = 1, so the oracle never
// names an absent category. The pretrained model reads a corrupted, per-scene
// frozen percept instead of z and adds co-occurrence boosts from the categories
// named in the last markov_k tokens.

#include "coad/core.hpp"

#include <array>
#include <cstdio>

namespace coad {

struct PerceptionNoise {
  double fpr = 0.0;  // absent category believed present
  double fnr = 0.0;  // present category believed absent
  bool operator==(const PerceptionNoise&) const = default;
};

struct WorldConfig {
  std::size_t n_categories = 8;
  std::size_t n_fillers = 8;
  std::vector<std::string> category_names;  // empty: default names
  Matrix cooccur;                           // C x C, zero diagonal
  std::vector<double> presence_prior;       // length C
  std::vector<PerceptionNoise> perception_noise;
  std::size_t markov_k = 2;
  std::uint64_t seed = 7;
  double gamma = 0.5;

  // Score shaping.
  double absent_penalty = 25.0;
  double bigram_scale = 0.7;
  double object_bias = 1.0;
  double filler_bias = 0.0;
  double eos_bias = -4.0;
  double eos_per_mention = 1.0;
  double eos_per_token = 0.3;
  double repeat_penalty = 5.0;
  double filler_conditioning_scale = 0.3;
  double probe_scale = 3.0;
  double probe_eos_score = -8.0;
  double probe_cooccur_weight = 0.15;

  void validate() const {
    const std::size_t C = n_categories;
    if (C < 1) throw ConfigError("world: need at least one category");
    if (C > 64) throw ConfigError("world: at most 64 categories supported");
    if (markov_k < 1) throw ConfigError("world: markov_k must be >= 1");
    if (!category_names.empty() && category_names.size() != C) throw ConfigError("world: category_names length != C");
    if (cooccur.rows != C || cooccur.cols != C) throw ConfigError("world: cooccur must be C x C");
    for (std::size_t i = 0; i < C; ++i) {
      if (cooccur(i, i) != 0.0) throw ConfigError("world: cooccur diagonal must be zero");
      for (std::size_t j = 0; j < C; ++j) {
        if (!(cooccur(i, j) >= 0.0) || !std::isfinite(cooccur(i, j))) throw ConfigError("world: cooccur must be nonnegative");
      }
    }
    if (presence_prior.size() != C) throw ConfigError("world: presence_prior length != C");
    if (perception_noise.size() != C) throw ConfigError("world: perception_noise length != C");
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    for (double p : presence_prior) {
      if (!rate_ok(p)) throw ConfigError("world: presence_prior outside [0,1]");
    }
    for (const auto& n : perception_noise) {
      if (!rate_ok(n.fpr) || !rate_ok(n.fnr)) throw ConfigError("world: perception rates outside [0,1]");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("world: gamma must be in (0,1]");
    if (!(absent_penalty > 0.0)) throw ConfigError("world: absent_penalty must be positive");
  }

  std::vector<std::string> resolved_names() const {
    if (!category_names.empty()) return category_names;
    static const std::array<const char*, 16> kNames = {"knife", "fork",  "spoon", "cup",   "plate", "bowl",
                                                        "bench", "dog",   "cat",   "car",   "bus",   "chair",
                                                        "table", "bottle", "clock", "horse"};
    std::vector<std::string> out;
    for (std::size_t c = 0; c < n_categories; ++c) {
      out.push_back(c < kNames.size() ? std::string(kNames[c]) : "obj" + std::to_string(c));
    }
    return out;
  }

  /// Unconfounded world: zero co-occurrence, noiseless percept.
  static WorldConfig clean(std::size_t C, std::size_t fillers, std::uint64_t seed, double prior = 0.3) {
    WorldConfig w;
    w.n_categories = C;
    w.n_fillers = fillers;
    w.seed = seed;
    w.cooccur = Matrix(C, C, 0.0);
    w.presence_prior.assign(C, prior);
    w.perception_noise.assign(C, PerceptionNoise{});
    return w;
  }
};

/// Confounded world with `n_pairs` random directed co-occurrence links of the
/// given strength (in score units) plus uniform perception noise.
inline WorldConfig make_confounded_world(std::size_t C, std::size_t fillers, std::uint64_t seed, std::size_t n_pairs,
                                         double strength, double percept_fpr, double percept_fnr, double prior = 0.3) {
  WorldConfig w = WorldConfig::clean(C, fillers, seed, prior);
  Rng rng(derive_seed(seed, "cooccur"));
  std::size_t placed = 0;
  const std::size_t max_pairs = C * (C - 1);
  while (placed < std::min(n_pairs, max_pairs)) {
    std::size_t a = rng.index(C);
    std::size_t b = rng.index(C);
    if (a == b || w.cooccur(a, b) != 0.0) continue;
    w.cooccur(a, b) = strength * (0.85 + 0.3 * rng.uniform());
    ++placed;
  }
  w.perception_noise.assign(C, PerceptionNoise{percept_fpr, percept_fnr});
  return w;
}

struct DetectorConfig {
  std::vector<double> tpr;
  std::vector<double> fpr;
  double confidence_sharpness = 1.0;

  void validate(std::size_t C) const {
    if (tpr.size() != C || fpr.size() != C) throw ConfigError("detector: tpr/fpr length != C");
    for (std::size_t c = 0; c < C; ++c) {
      if (!(tpr[c] >= 0.0 && tpr[c] <= 1.0 && fpr[c] >= 0.0 && fpr[c] <= 1.0)) {
        throw ConfigError("detector: rates outside [0,1]");
      }
    }
    if (!(confidence_sharpness > 0.0)) throw ConfigError("detector: confidence_sharpness must be positive");
  }

  static DetectorConfig uniform(std::size_t C, double tpr, double fpr, double sharpness = 1.0) {
    return DetectorConfig{std::vector<double>(C, tpr), std::vector<double>(C, fpr), sharpness};
  }
  static DetectorConfig noiseless(std::size_t C) { return uniform(C, 1.0, 0.0, 1.0); }
};

/// Parameters of the oracle and pretrained models. Immutable after generation.
struct WorldModelSuite {
  WorldConfig config;
  Vocab vocab;
  std::vector<Matrix> bigram;     // markov_k tables, [j](token at position -(j+1), y)
  std::vector<double> base_bias;  // V
  Matrix conditioning;            // C x V, w_c,y in caption contexts
  double gamma = 0.5;

  std::size_t n_categories() const { return config.n_categories; }
  std::size_t vocab_size() const { return vocab.size(); }
};

inline WorldModelSuite generate_world(const WorldConfig& config) {
  config.validate();
  WorldModelSuite s;
  s.config = config;
  s.vocab = Vocab::build(config.resolved_names(), config.n_fillers);
  s.gamma = config.gamma;

  const std::size_t V = s.vocab.size();
  const std::size_t C = config.n_categories;
  const auto& sp = s.vocab.special();
  const double L = config.absent_penalty;
  Rng rng(derive_seed(config.seed, "world"));

  s.bigram.assign(config.markov_k, Matrix(V, V, 0.0));
  for (std::size_t j = 0; j < config.markov_k; ++j) {
    const double scale = config.bigram_scale / static_cast<double>(j + 1);
    for (double& v : s.bigram[j].data) v = rng.normal(0.0, scale);
  }

  s.base_bias.assign(V, config.filler_bias);
  s.base_bias[static_cast<std::size_t>(sp.bos)] = -L;
  s.base_bias[static_cast<std::size_t>(sp.yes)] = -L;
  s.base_bias[static_cast<std::size_t>(sp.no)] = -L;
  s.base_bias[static_cast<std::size_t>(sp.probe)] = -L;
  s.base_bias[static_cast<std::size_t>(sp.eos)] = config.eos_bias;
  for (std::size_t c = 0; c < C; ++c) s.base_bias[static_cast<std::size_t>(s.vocab.category_token(c))] = config.object_bias - L;

  s.conditioning = Matrix(C, V, 0.0);
  const std::size_t first_filler = 5 + C;
  for (std::size_t c = 0; c < C; ++c) {
    s.conditioning(c, static_cast<std::size_t>(s.vocab.category_token(c))) = L;
    for (std::size_t f = first_filler; f < V; ++f) s.conditioning(c, f) = rng.normal(0.0, config.filler_conditioning_scale);
  }
  return s;
}

inline Scene sample_scene(const WorldConfig& config, Rng& rng) {
  Scene scene;
  scene.seed = rng.next_u64();
  scene.z_star.resize(config.n_categories);
  for (std::size_t c = 0; c < config.n_categories; ++c) {
    scene.z_star[c] = rng.bernoulli(config.presence_prior.at(c)) ? 1 : 0;
  }
  return scene;
}

// ============================================================================
// Context featurization
// ============================================================================

struct ContextFeatures {
  std::vector<TokenId> history;  // most recent first, BOS-padded to markov_k
  std::vector<std::uint8_t> mentioned;
  std::size_t n_mentioned = 0;
  std::vector<std::size_t> recent_categories;  // distinct categories in the last markov_k tokens
  std::size_t length = 0;                      // tokens after the leading BOS
  std::optional<std::size_t> probe_category;
};

inline ContextFeatures featurize(const Context& x, const Vocab& vocab, std::size_t markov_k) {
  if (x.empty()) throw DimensionError("context must be nonempty");
  const auto& sp = vocab.special();
  ContextFeatures f;
  f.mentioned.assign(vocab.n_categories(), 0);
  f.length = x.size() - 1;
  for (TokenId t : x.tokens()) {
    if (!vocab.valid(t)) throw DimensionError("context token out of range");
    if (auto c = vocab.category_of(t); c && !f.mentioned[*c]) {
      f.mentioned[*c] = 1;
      ++f.n_mentioned;
    }
  }
  f.history.assign(markov_k, sp.bos);
  for (std::size_t j = 0; j < markov_k && j < x.size(); ++j) {
    TokenId t = x[x.size() - 1 - j];
    f.history[j] = t;
    if (auto c = vocab.category_of(t);
        c && std::find(f.recent_categories.begin(), f.recent_categories.end(), *c) == f.recent_categories.end()) {
      f.recent_categories.push_back(*c);
    }
  }
  if (x.size() >= 2 && x[x.size() - 2] == sp.probe) {
    f.probe_category = vocab.category_of(x.back());
  }
  return f;
}

namespace detail {

inline void check_z(std::span<const double> z, std::size_t C) {
  if (z.size() != C) throw DimensionError("object vector length " + std::to_string(z.size()) + " != C=" + std::to_string(C));
}

/// z-independent scores b(x, y) shared by the oracle and the pretrained model.
inline std::vector<double> base_scores(const ContextFeatures& f, const WorldModelSuite& s) {
  const auto& cfg = s.config;
  const auto& sp = s.vocab.special();
  const std::size_t V = s.vocab_size();
  if (f.probe_category) {
    std::vector<double> out(V, -cfg.absent_penalty);
    out[static_cast<std::size_t>(sp.no)] = 0.0;
    out[static_cast<std::size_t>(sp.yes)] = -cfg.probe_scale;
    out[static_cast<std::size_t>(sp.eos)] = cfg.probe_eos_score;
    return out;
  }
  std::vector<double> out = s.base_bias;
  for (std::size_t j = 0; j < f.history.size(); ++j) {
    auto row = s.bigram[j].row(static_cast<std::size_t>(f.history[j]));
    for (std::size_t y = 0; y < V; ++y) out[y] += row[y];
  }
  for (std::size_t c = 0; c < s.n_categories(); ++c) {
    if (f.mentioned[c]) out[static_cast<std::size_t>(s.vocab.category_token(c))] -= cfg.repeat_penalty;
  }
  out[static_cast<std::size_t>(sp.eos)] +=
      cfg.eos_per_mention * static_cast<double>(f.n_mentioned) + cfg.eos_per_token * static_cast<double>(f.length);
  return out;
}

/// Adds sum_c z_c * w_c,y(x).
inline void add_conditioning(std::vector<double>& scores, const ContextFeatures& f, std::span<const double> z,
                             const WorldModelSuite& s) {
  if (f.probe_category) {
    scores[static_cast<std::size_t>(s.vocab.special().yes)] += 2.0 * s.config.probe_scale * z[*f.probe_category];
    return;
  }
  const std::size_t V = s.vocab_size();
  for (std::size_t c = 0; c < s.n_categories(); ++c) {
    if (z[c] == 0.0) continue;
    auto w = s.conditioning.row(c);
    for (std::size_t y = 0; y < V; ++y) scores[y] += z[c] * w[y];
  }
}

/// Language-prior boosts the pretrained model picked up from co-occurrence statistics.
inline void add_cooccurrence(std::vector<double>& scores, const ContextFeatures& f, std::span<const double> percept,
                             const WorldModelSuite& s) {
  const auto& co = s.config.cooccur;
  if (f.probe_category) {
    const std::size_t target = *f.probe_category;
    double prior = 0.0;
    for (std::size_t c = 0; c < s.n_categories(); ++c) {
      if (c != target) prior += percept[c] * co(c, target);
    }
    scores[static_cast<std::size_t>(s.vocab.special().yes)] += s.config.probe_cooccur_weight * prior;
    return;
  }
  for (std::size_t src : f.recent_categories) {
    for (std::size_t c = 0; c < s.n_categories(); ++c) {
      scores[static_cast<std::size_t>(s.vocab.category_token(c))] += co(src, c);
    }
  }
}

}  // namespace detail

// ============================================================================
// Models
// ============================================================================

inline TokenDist oracle_next(const Context& x, std::span<const double> z, const WorldModelSuite& suite) {
  detail::check_z(z, suite.n_categories());
  const auto f = featurize(x, suite.vocab, suite.config.markov_k);
  auto scores = detail::base_scores(f, suite);
  detail::add_conditioning(scores, f, z, suite);
  return softmax(scores);
}

inline TokenDist oracle_next(const Context& x, const ObjectVector& z, const WorldModelSuite& suite) {
  return oracle_next(x, z.as_reals(), suite);
}

inline TokenDist oracle_next(const Context& x, const ObjectBelief& z, const WorldModelSuite& suite) {
  return oracle_next(x, std::span<const double>(z.z_tilde), suite);
}

/// The pretrained model's internal object belief for a scene: z* with entries
/// flipped at the configured perception rates, frozen per (world, scene).
inline ObjectVector pretrained_percept(const Scene& scene, const WorldModelSuite& suite) {
  const std::size_t C = suite.n_categories();
  if (scene.n_categories() != C) throw DimensionError("scene category count mismatch");
  const std::uint64_t base = derive_seed(suite.config.seed, "percept", scene.seed);
  ObjectVector out;
  out.z.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& noise = suite.config.perception_noise[c];
    const double u = static_cast<double>(splitmix64(base + c) >> 11) * 0x1.0p-53;
    if (scene.z_star[c]) {
      out.z[c] = u < noise.fnr ? 0 : 1;
    } else {
      out.z[c] = u < noise.fpr ? 1 : 0;
    }
  }
  return out;
}

inline TokenDist pretrained_next(const Context& x, const Scene& scene, const WorldModelSuite& suite) {
  const auto percept = pretrained_percept(scene, suite).as_reals();
  const auto f = featurize(x, suite.vocab, suite.config.markov_k);
  auto scores = detail::base_scores(f, suite);
  detail::add_conditioning(scores, f, percept, suite);
  detail::add_cooccurrence(scores, f, percept, suite);
  return softmax(scores);
}

/// gamma * P_oracle(x, z) + (1 - gamma) * P_pretrained(x, scene).
/// `pretrained` may carry an already evaluated P_pretrained(x, scene).
inline TokenDist finetuned_constructed_next(const Context& x, const Scene& scene, std::span<const double> z,
                                            const WorldModelSuite& suite, const TokenDist* pretrained = nullptr) {
  const TokenDist oracle = oracle_next(x, z, suite);
  if (suite.gamma == 1.0) return oracle;
  if (pretrained) return mix(oracle, *pretrained, suite.gamma);
  return mix(oracle, pretrained_next(x, scene, suite), suite.gamma);
}

inline TokenDist finetuned_constructed_next(const Context& x, const Scene& scene, const ObjectVector& z,
                                            const WorldModelSuite& suite) {
  return finetuned_constructed_next(x, scene, z.as_reals(), suite);
}

/// Finetuned-model interface consumed by the marginalization routines. The
/// constructed variant realizes the mixture exactly.
struct ConstructedFinetuned {
  const WorldModelSuite* suite = nullptr;

  TokenDist operator()(const Context& x, const Scene& scene, std::span<const double> z,
                       const TokenDist* pretrained = nullptr) const {
    return finetuned_constructed_next(x, scene, z, *suite, pretrained);
  }
};

/// A finetuned model that never received z: its oracle component reads the
/// same corrupted percept as the pretrained backbone.
struct ConstructedFinetunedNoZ {
  const WorldModelSuite* suite = nullptr;

  TokenDist operator()(const Context& x, const Scene& scene, const TokenDist* pretrained = nullptr) const {
    return finetuned_constructed_next(x, scene, pretrained_percept(scene, *suite).as_reals(), *suite, pretrained);
  }
};

// ============================================================================
// Detector and belief sampling
// ============================================================================

namespace detail {

/// sigmoid(sharpness * ln(lr)) with the lr = 0 and lr = inf limits taken exactly.
inline double calibrated_confidence(double num, double den, double sharpness) {
  if (den == 0.0 && num == 0.0) return 0.5;
  if (den == 0.0) return 1.0;
  if (num == 0.0) return 0.0;
  const double t = sharpness * std::log(num / den);
  return 1.0 / (1.0 + std::exp(-t));
}

}  // namespace detail

/// Reads only the scene. Detected categories map to the likelihood-ratio
/// confidence tpr/fpr, undetected ones to (1-tpr)/(1-fpr), tempered by sharpness.
inline ObjectBelief detect(const Scene& scene, const DetectorConfig& dconfig, Rng& rng) {
  const std::size_t C = scene.n_categories();
  dconfig.validate(C);
  std::vector<double> out(C);
  for (std::size_t c = 0; c < C; ++c) {
    const bool detected = rng.bernoulli(scene.z_star[c] ? dconfig.tpr[c] : dconfig.fpr[c]);
    out[c] = detected ? detail::calibrated_confidence(dconfig.tpr[c], dconfig.fpr[c], dconfig.confidence_sharpness)
                      : detail::calibrated_confidence(1.0 - dconfig.tpr[c], 1.0 - dconfig.fpr[c],
                                                      dconfig.confidence_sharpness);
  }
  return ObjectBelief(std::move(out));
}

inline ObjectVector sample_z(const ObjectBelief& belief, Rng& rng) {
  ObjectVector z;
  z.z.resize(belief.size());
  for (std::size_t c = 0; c < belief.size(); ++c) z.z[c] = rng.uniform() < belief.z_tilde[c] ? 1 : 0;
  return z;
}

/// "knife: 0.93, fork: 0.02"
inline std::string format_belief(const ObjectBelief& belief, const Vocab& vocab) {
  std::string out;
  char buf[32];
  for (std::size_t c = 0; c < belief.size(); ++c) {
    if (c) out += ", ";
    std::snprintf(buf, sizeof(buf), "%.2f", belief.z_tilde[c]);
    out += vocab.category_name(c) + ": " + buf;
  }
  return out;
}

}  // namespace coad
