#pragma once

// Empirical finetuned model: a log-linear next-token model over the same
// context features the world uses, fit by maximum likelihood to captions drawn
// from the token-level mixture of the oracle and the pretrained model.

#include "coad/worldsim.hpp"

#include <map>

namespace coad {

/// One training sequence. Tokens before `prompt_length` are conditioning only.
struct CaptionRecord {
  Scene scene;
  ObjectVector z;
  std::vector<TokenId> tokens;
  std::size_t prompt_length = 1;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  std::size_t steps = 300;
  double learning_rate = 0.05;
  bool use_z = true;
  bool context_noise = false;  // Gaussian perturbation of history activations
  double noise_sigma = 0.005;
  double noise_probability = 0.5;
  std::uint64_t seed = 0;
};

struct TrainedParams {
  std::size_t vocab_size = 0;
  std::size_t n_categories = 0;
  std::size_t markov_k = 1;
  bool uses_z = true;
  std::vector<double> bias;
  std::vector<Matrix> bigram;
  Matrix cond;                     // C x V
  std::vector<double> mention_w;   // per token, times number of mentioned categories
  std::vector<double> length_w;    // per token, times context length
  double repeat_w = 0.0;           // object token whose category was already named
  Matrix cooccur_w;                // C x C, recent category -> object token
  std::vector<double> probe_bias;  // V, probe contexts
  std::vector<double> probe_z;     // V, times z of the probed category

  static TrainedParams zeros(std::size_t V, std::size_t C, std::size_t k, bool uses_z) {
    TrainedParams p;
    p.vocab_size = V;
    p.n_categories = C;
    p.markov_k = k;
    p.uses_z = uses_z;
    p.bias.assign(V, 0.0);
    p.bigram.assign(k, Matrix(V, V, 0.0));
    p.cond = Matrix(C, V, 0.0);
    p.mention_w.assign(V, 0.0);
    p.length_w.assign(V, 0.0);
    p.cooccur_w = Matrix(C, C, 0.0);
    p.probe_bias.assign(V, 0.0);
    p.probe_z.assign(V, 0.0);
    return p;
  }

  /// Flat views over every parameter, in a fixed order, for the optimizer.
  std::vector<std::span<double>> blocks() {
    std::vector<std::span<double>> out{bias, cond.data, mention_w, length_w, std::span<double>(&repeat_w, 1),
                                       cooccur_w.data, probe_bias, probe_z};
    for (auto& b : bigram) out.emplace_back(b.data);
    return out;
  }
};

namespace detail {

inline std::vector<double> trained_scores(const TrainedParams& p, const ContextFeatures& f, std::span<const double> z,
                                          const Vocab& vocab, std::span<const double> history_activation = {}) {
  const std::size_t V = p.vocab_size;
  std::vector<double> s(V);
  if (f.probe_category) {
    const double zc = p.uses_z ? z[*f.probe_category] : 0.0;
    for (std::size_t y = 0; y < V; ++y) s[y] = p.probe_bias[y] + p.probe_z[y] * zc;
    return s;
  }
  const double m = static_cast<double>(f.n_mentioned);
  const double len = static_cast<double>(f.length);
  for (std::size_t y = 0; y < V; ++y) s[y] = p.bias[y] + p.mention_w[y] * m + p.length_w[y] * len;
  for (std::size_t j = 0; j < p.markov_k; ++j) {
    const double a = history_activation.empty() ? 1.0 : history_activation[j];
    auto row = p.bigram[j].row(static_cast<std::size_t>(f.history[j]));
    for (std::size_t y = 0; y < V; ++y) s[y] += a * row[y];
  }
  if (p.uses_z) {
    for (std::size_t c = 0; c < p.n_categories; ++c) {
      if (z[c] == 0.0) continue;
      auto row = p.cond.row(c);
      for (std::size_t y = 0; y < V; ++y) s[y] += z[c] * row[y];
    }
  }
  for (std::size_t c = 0; c < p.n_categories; ++c) {
    const auto y = static_cast<std::size_t>(vocab.category_token(c));
    if (f.mentioned[c]) s[y] += p.repeat_w;
    for (std::size_t src : f.recent_categories) s[y] += p.cooccur_w(src, c);
  }
  return s;
}

}  // namespace detail

/// Callable finetuned model backed by fitted parameters.
struct TrainedFinetuned {
  const TrainedParams* params = nullptr;
  const Vocab* vocab = nullptr;

  TokenDist operator()(const Context& x, const Scene&, std::span<const double> z,
                       const TokenDist* /*pretrained*/ = nullptr) const {
    detail::check_z(z, params->n_categories);
    const auto f = featurize(x, *vocab, params->markov_k);
    return softmax(detail::trained_scores(*params, f, z, *vocab));
  }
};

/// Captions where each token comes from the oracle with probability gamma and
/// from the pretrained model otherwise, sampled at temperature 1. With
/// `include_probes`, every scene also contributes one answered probe per category.
inline std::vector<CaptionRecord> sample_mixture_corpus(const WorldModelSuite& suite, std::size_t n_scenes, Rng& rng,
                                                        bool include_probes = false, std::size_t max_tokens = 64) {
  const auto& sp = suite.vocab.special();
  auto draw = [&](const TokenDist& p) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(p.argmax());
  };
  auto next = [&](const Context& x, const Scene& scene, const ObjectVector& z) {
    return rng.bernoulli(suite.gamma) ? oracle_next(x, z, suite) : pretrained_next(x, scene, suite);
  };

  std::vector<CaptionRecord> corpus;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    Scene scene = sample_scene(suite.config, rng);
    ObjectVector z{scene.z_star};
    Context x{sp.bos};
    for (std::size_t t = 0; t < max_tokens; ++t) {
      const TokenId y = draw(next(x, scene, z));
      x.append(y);
      if (y == sp.eos) break;
    }
    corpus.push_back(CaptionRecord{scene, z, {x.tokens().begin(), x.tokens().end()}, 1});
    if (include_probes) {
      for (std::size_t c = 0; c < suite.n_categories(); ++c) {
        Context probe{sp.bos, sp.probe, suite.vocab.category_token(c)};
        const TokenId y = draw(next(probe, scene, z));
        probe.append(y);
        corpus.push_back(CaptionRecord{scene, z, {probe.tokens().begin(), probe.tokens().end()}, 3});
      }
    }
  }
  return corpus;
}

/// Fits TrainedParams by full-batch Adam ascent on the mean log-likelihood,
/// starting from zero weights, for a fixed number of steps.
inline TrainedParams train_finetuned(const std::vector<CaptionRecord>& corpus, const WorldModelSuite& suite,
                                     const TrainConfig& tc = {}) {
  if (corpus.empty()) throw EmptyCorpusError("train_finetuned: empty corpus");
  const std::size_t V = suite.vocab_size();
  const std::size_t C = suite.n_categories();
  const std::size_t k = suite.config.markov_k;

  // Aggregate identical feature contexts.
  struct Group {
    ContextFeatures features;
    std::vector<double> z;
    std::map<TokenId, double> targets;
    double total = 0.0;
  };
  std::map<std::vector<std::int64_t>, std::size_t> index;
  std::vector<Group> groups;
  double n_tokens = 0.0;
  for (const auto& rec : corpus) {
    if (rec.z.size() != C) throw DimensionError("train_finetuned: record z length != C");
    Context x(std::vector<TokenId>(rec.tokens.begin(), rec.tokens.begin() + static_cast<std::ptrdiff_t>(rec.prompt_length)));
    for (std::size_t t = rec.prompt_length; t < rec.tokens.size(); ++t) {
      auto f = featurize(x, suite.vocab, k);
      std::vector<std::int64_t> key;
      key.push_back(f.probe_category ? static_cast<std::int64_t>(*f.probe_category) : -1);
      key.insert(key.end(), f.history.begin(), f.history.end());
      key.push_back(static_cast<std::int64_t>(ObjectVector{f.mentioned}.mask()));
      key.push_back(static_cast<std::int64_t>(f.length));
      key.push_back(tc.use_z ? static_cast<std::int64_t>(rec.z.mask()) : 0);
      auto [it, inserted] = index.emplace(std::move(key), groups.size());
      if (inserted) {
        groups.push_back(Group{std::move(f), tc.use_z ? rec.z.as_reals() : std::vector<double>(C, 0.0), {}, 0.0});
      }
      Group& g = groups[it->second];
      g.targets[rec.tokens[t]] += 1.0;
      g.total += 1.0;
      n_tokens += 1.0;
      x.append(rec.tokens[t]);
    }
  }

  TrainedParams params = TrainedParams::zeros(V, C, k, tc.use_z);
  TrainedParams grad = TrainedParams::zeros(V, C, k, tc.use_z);
  TrainedParams m1 = TrainedParams::zeros(V, C, k, tc.use_z);
  TrainedParams m2 = TrainedParams::zeros(V, C, k, tc.use_z);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  Rng rng(derive_seed(tc.seed, "train"));
  std::vector<double> activation(k, 1.0);
  std::vector<double> resid(V);

  if (n_tokens == 0.0) return params;

  for (std::size_t step = 1; step <= tc.steps; ++step) {
    for (auto blk : grad.blocks()) std::fill(blk.begin(), blk.end(), 0.0);

    for (const Group& g : groups) {
      std::fill(activation.begin(), activation.end(), 1.0);
      if (tc.context_noise && rng.bernoulli(tc.noise_probability)) {
        for (double& a : activation) a += rng.normal(0.0, tc.noise_sigma);
      }
      const auto p = softmax(detail::trained_scores(params, g.features, g.z, suite.vocab, activation));
      for (std::size_t y = 0; y < V; ++y) resid[y] = -g.total * p[y];
      for (const auto& [y, cnt] : g.targets) resid[static_cast<std::size_t>(y)] += cnt;

      const auto& f = g.features;
      if (f.probe_category) {
        const double zc = tc.use_z ? g.z[*f.probe_category] : 0.0;
        for (std::size_t y = 0; y < V; ++y) {
          grad.probe_bias[y] += resid[y];
          grad.probe_z[y] += zc * resid[y];
        }
        continue;
      }
      const double m = static_cast<double>(f.n_mentioned);
      const double len = static_cast<double>(f.length);
      for (std::size_t y = 0; y < V; ++y) {
        grad.bias[y] += resid[y];
        grad.mention_w[y] += m * resid[y];
        grad.length_w[y] += len * resid[y];
      }
      for (std::size_t j = 0; j < k; ++j) {
        auto row = grad.bigram[j].row(static_cast<std::size_t>(f.history[j]));
        for (std::size_t y = 0; y < V; ++y) row[y] += activation[j] * resid[y];
      }
      if (tc.use_z) {
        for (std::size_t c = 0; c < C; ++c) {
          if (g.z[c] == 0.0) continue;
          auto row = grad.cond.row(c);
          for (std::size_t y = 0; y < V; ++y) row[y] += g.z[c] * resid[y];
        }
      }
      for (std::size_t c = 0; c < C; ++c) {
        const auto y = static_cast<std::size_t>(suite.vocab.category_token(c));
        if (f.mentioned[c]) grad.repeat_w += resid[y];
        for (std::size_t src : f.recent_categories) grad.cooccur_w(src, c) += resid[y];
      }
    }

    auto pb = params.blocks();
    auto gb = grad.blocks();
    auto b1 = m1.blocks();
    auto b2 = m2.blocks();
    const double corr1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double corr2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    for (std::size_t b = 0; b < pb.size(); ++b) {
      for (std::size_t i = 0; i < pb[b].size(); ++i) {
        const double gi = gb[b][i] / n_tokens;
        b1[b][i] = kBeta1 * b1[b][i] + (1.0 - kBeta1) * gi;
        b2[b][i] = kBeta2 * b2[b][i] + (1.0 - kBeta2) * gi * gi;
        pb[b][i] += tc.learning_rate * (b1[b][i] / corr1) / (std::sqrt(b2[b][i] / corr2) + kEps);
      }
    }
  }
  return params;
}

}  // namespace coad
