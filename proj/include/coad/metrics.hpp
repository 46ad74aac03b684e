#pragma once

// Hallucination measurement: CHAIR, POPE, next-token divergence, and paired
// bootstrap intervals over scenes.

#include "coad/decoder.hpp"

#include <functional>
#include <set>

namespace coad {

// ============================================================================
// CHAIR
// ============================================================================

/// Categories whose naming token appears in the caption.
inline std::set<std::size_t> extract_mentions(std::span<const TokenId> caption, const Vocab& vocab) {
  std::set<std::size_t> out;
  for (TokenId t : caption) {
    if (auto c = vocab.category_of(t)) out.insert(*c);
  }
  return out;
}

inline std::set<std::size_t> extract_mentions(const Caption& caption, const Vocab& vocab) {
  return extract_mentions(std::span<const TokenId>(caption.tokens), vocab);
}

struct CaptionHallucination {
  std::size_t mentions = 0;
  std::size_t hallucinated = 0;
};

struct ChairReport {
  double chair_s = 0.0;
  double chair_i = 0.0;
  std::size_t n_captions = 0;
  std::size_t n_mentions = 0;
  std::size_t n_hallucinated_mentions = 0;
  std::size_t n_hallucinated_captions = 0;
  bool zero_mentions = false;  // chair_i was 0/0 and reported as 0

  double chair_s_pct() const { return 100.0 * chair_s; }
  double chair_i_pct() const { return 100.0 * chair_i; }
};

inline std::vector<CaptionHallucination> chair_per_caption(const std::vector<Caption>& captions,
                                                           const std::vector<Scene>& scenes, const Vocab& vocab) {
  if (captions.size() != scenes.size()) throw DimensionError("chair: captions and scenes differ in length");
  std::vector<CaptionHallucination> out;
  out.reserve(captions.size());
  for (std::size_t i = 0; i < captions.size(); ++i) {
    CaptionHallucination h;
    for (std::size_t c : extract_mentions(captions[i], vocab)) {
      ++h.mentions;
      if (!scenes[i].present(c)) ++h.hallucinated;
    }
    out.push_back(h);
  }
  return out;
}

inline ChairReport chair_from_counts(const std::vector<CaptionHallucination>& per_caption) {
  ChairReport r;
  r.n_captions = per_caption.size();
  for (const auto& h : per_caption) {
    r.n_mentions += h.mentions;
    r.n_hallucinated_mentions += h.hallucinated;
    if (h.hallucinated > 0) ++r.n_hallucinated_captions;
  }
  r.chair_s = r.n_captions ? static_cast<double>(r.n_hallucinated_captions) / static_cast<double>(r.n_captions) : 0.0;
  r.zero_mentions = r.n_mentions == 0;
  r.chair_i = r.n_mentions ? static_cast<double>(r.n_hallucinated_mentions) / static_cast<double>(r.n_mentions) : 0.0;
  return r;
}

inline ChairReport chair(const std::vector<Caption>& captions, const std::vector<Scene>& scenes, const Vocab& vocab) {
  return chair_from_counts(chair_per_caption(captions, scenes, vocab));
}

// ============================================================================
// POPE
// ============================================================================

enum class PopeSplit { random, popular, adversarial };

inline const char* to_string(PopeSplit s) {
  switch (s) {
    case PopeSplit::random: return "random";
    case PopeSplit::popular: return "popular";
    case PopeSplit::adversarial: return "adversarial";
  }
  return "?";
}

inline PopeSplit parse_pope_split(std::string_view s) {
  if (s == "random") return PopeSplit::random;
  if (s == "popular") return PopeSplit::popular;
  if (s == "adversarial") return PopeSplit::adversarial;
  throw ConfigError("unknown POPE split: " + std::string(s));
}

struct Probe {
  std::size_t scene_index = 0;
  std::uint64_t scene_seed = 0;
  std::size_t category = 0;
  bool present = false;
  PopeSplit split = PopeSplit::random;
};

struct ProbeSet {
  std::vector<Probe> probes;
  std::size_t warnings = 0;  // scenes with no absent category
};

namespace detail {

/// First k entries of `candidates` after a stable sort by descending score.
inline std::vector<std::size_t> top_k(std::vector<std::size_t> candidates, const std::vector<double>& score, std::size_t k) {
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  candidates.resize(std::min(k, candidates.size()));
  return candidates;
}

inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  const std::size_t n = std::min(k, pool.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

}  // namespace detail

/// Per scene: up to k positives drawn from present categories and up to k
/// negatives chosen per split. Popular ranks absent categories by their
/// presence count over `scenes`; adversarial ranks them by summed co-occurrence
/// from the scene's present categories.
inline ProbeSet build_pope_probes(const std::vector<Scene>& scenes, PopeSplit split, std::size_t k_per_scene, Rng& rng,
                                  const Matrix& cooccur) {
  if (scenes.empty()) throw DimensionError("build_pope_probes: no scenes");
  const std::size_t C = scenes.front().n_categories();
  std::vector<double> popularity(C, 0.0);
  for (const auto& s : scenes) {
    for (std::size_t c = 0; c < C; ++c) popularity[c] += s.z_star[c];
  }

  ProbeSet out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    std::vector<std::size_t> present, absent;
    for (std::size_t c = 0; c < C; ++c) (s.present(c) ? present : absent).push_back(c);

    for (std::size_t c : detail::sample_without_replacement(present, k_per_scene, rng)) {
      out.probes.push_back(Probe{i, s.seed, c, true, split});
    }
    if (absent.empty()) {
      ++out.warnings;
      continue;
    }
    std::vector<std::size_t> negatives;
    switch (split) {
      case PopeSplit::random: negatives = detail::sample_without_replacement(absent, k_per_scene, rng); break;
      case PopeSplit::popular: negatives = detail::top_k(absent, popularity, k_per_scene); break;
      case PopeSplit::adversarial: {
        std::vector<double> pull(C, 0.0);
        for (std::size_t c : absent) {
          for (std::size_t p : present) pull[c] += cooccur(p, c);
        }
        negatives = detail::top_k(absent, pull, k_per_scene);
        break;
      }
    }
    for (std::size_t c : negatives) out.probes.push_back(Probe{i, s.seed, c, false, split});
  }
  return out;
}

struct PopeReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  // Empty optional marks an undefined ratio (zero denominator).
  std::optional<double> accuracy, precision, recall, f1, yes_ratio;
};

inline PopeReport pope_eval(const std::vector<Probe>& probes, const std::vector<bool>& answers) {
  if (probes.size() != answers.size()) throw DimensionError("pope_eval: probes and answers differ in length");
  PopeReport r;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    if (answers[i]) (probes[i].present ? r.tp : r.fp)++;
    else (probes[i].present ? r.fn : r.tn)++;
  }
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  const std::size_t total = r.tp + r.fp + r.fn + r.tn;
  r.accuracy = ratio(r.tp + r.tn, total);
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.yes_ratio = ratio(r.tp + r.fp, total);
  if (r.precision && r.recall && (*r.precision + *r.recall) > 0.0) {
    r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  }
  return r;
}

// ============================================================================
// Divergence
// ============================================================================

/// KL(p || q) in nats; +inf when p puts mass where q has none.
inline double kl_next_token(const TokenDist& p, const TokenDist& q) {
  if (p.size() != q.size()) throw DimensionError("kl: vocabulary size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

/// Mean KL(source(x) || oracle(x)) over the given contexts.
template <NextTokenSource Source, NextTokenSource Oracle>
double avg_divergence(const Source& source, const Oracle& oracle, const std::vector<Context>& contexts) {
  if (contexts.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& x : contexts) sum += kl_next_token(source(x), oracle(x));
  return sum / static_cast<double>(contexts.size());
}

// ============================================================================
// Paired bootstrap
// ============================================================================

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct PairedBootstrap {
  std::vector<Interval> ratio_ci;               // per group
  std::vector<std::vector<Interval>> diff_ci;   // [a][b]: ratio_a - ratio_b
};

/// Percentile intervals for per-group ratios sum(num)/sum(den) with the same
/// resampled unit indices shared across groups.
inline PairedBootstrap paired_bootstrap_ratio(const std::vector<std::vector<double>>& num,
                                              const std::vector<std::vector<double>>& den, std::size_t resamples,
                                              std::uint64_t seed, double level = 0.95) {
  const std::size_t G = num.size();
  PairedBootstrap out;
  out.ratio_ci.resize(G);
  out.diff_ci.assign(G, std::vector<Interval>(G));
  if (G == 0 || resamples == 0) return out;
  const std::size_t n = num.front().size();
  for (std::size_t g = 0; g < G; ++g) {
    if (num[g].size() != n || den[g].size() != n) throw DimensionError("bootstrap: ragged input");
  }
  if (n == 0) return out;

  std::vector<std::vector<double>> stats(G, std::vector<double>(resamples));
  std::vector<double> sn(G), sd(G);
  Rng rng(seed);
  for (std::size_t r = 0; r < resamples; ++r) {
    std::fill(sn.begin(), sn.end(), 0.0);
    std::fill(sd.begin(), sd.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.index(n);
      for (std::size_t g = 0; g < G; ++g) {
        sn[g] += num[g][j];
        sd[g] += den[g][j];
      }
    }
    for (std::size_t g = 0; g < G; ++g) stats[g][r] = sd[g] > 0.0 ? sn[g] / sd[g] : 0.0;
  }

  const double tail = (1.0 - level) / 2.0;
  auto percentile = [&](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto at = [&](double q) {
      const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1) + 0.5));
      return v[std::min(idx, v.size() - 1)];
    };
    return Interval{at(tail), at(1.0 - tail)};
  };
  for (std::size_t a = 0; a < G; ++a) {
    out.ratio_ci[a] = percentile(stats[a]);
    for (std::size_t b = 0; b < G; ++b) {
      if (a == b) continue;
      std::vector<double> d(resamples);
      for (std::size_t r = 0; r < resamples; ++r) d[r] = stats[a][r] - stats[b][r];
      out.diff_ci[a][b] = percentile(std::move(d));
    }
  }
  return out;
}

}  // namespace coad
