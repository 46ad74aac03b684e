#pragma once

// Experiment orchestration: seeded runs over a shared world and scene set,
// ablation sources, alpha sweeps, throughput measurement and report files.

#include "coad/config.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

namespace coad {

inline constexpr const char* kVersion = "coad-toolkit 0.1.0";

class IoError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Seed discipline
// ============================================================================

/// Every stochastic component draws from its own stream derived from the
/// master seed, so toggling one component never perturbs another.
struct SeedPlan {
  std::uint64_t master = 0;

  std::uint64_t scenes() const { return derive_seed(master, "scenes"); }
  std::uint64_t detector(std::size_t scene) const { return derive_seed(master, "detector", scene); }
  std::uint64_t decode(std::size_t scene, std::uint64_t policy_seed) const {
    return derive_seed(master ^ policy_seed, "decode", scene);
  }
  std::uint64_t mc(std::uint64_t fusion_seed) const { return derive_seed(master ^ fusion_seed, "mc"); }
  std::uint64_t pope(PopeSplit split) const { return derive_seed(master, "pope", static_cast<std::uint64_t>(split)); }
  std::uint64_t divergence(std::size_t scene) const { return derive_seed(master, "divergence", scene); }
  std::uint64_t bootstrap() const { return derive_seed(master, "bootstrap"); }
  std::uint64_t corpus() const { return derive_seed(master, "corpus"); }
  std::uint64_t train() const { return derive_seed(master, "train"); }
};

// ============================================================================
// Detector with invocation accounting
// ============================================================================

class CountingDetector {
 public:
  explicit CountingDetector(DetectorConfig config) : config_(std::move(config)) {}

  ObjectBelief operator()(const Scene& scene, Rng& rng) const {
    invocations_.fetch_add(1, std::memory_order_relaxed);
    return detect(scene, config_, rng);
  }

  std::size_t invocations() const { return invocations_.load(); }

 private:
  DetectorConfig config_;
  mutable std::atomic<std::size_t> invocations_{0};
};

// ============================================================================
// Shared run state
// ============================================================================

using FinetunedFn = std::function<TokenDist(const Context&, const Scene&, std::span<const double>, const TokenDist*)>;
using FinetunedNoZFn = std::function<TokenDist(const Context&, const Scene&, const TokenDist*)>;
using SourceFn = std::function<TokenDist(const Context&)>;

/// World, scenes, cached detector beliefs and finetuned models for one run.
struct RunContext {
  ExperimentConfig config;
  SeedPlan seeds;
  WorldModelSuite suite;
  std::vector<Scene> scenes;
  std::vector<ObjectBelief> beliefs;
  std::shared_ptr<CountingDetector> detector;
  std::shared_ptr<TrainedParams> trained;
  std::shared_ptr<TrainedParams> trained_no_z;
  FinetunedFn finetuned;
  FinetunedNoZFn finetuned_no_z;
  FusionConfig fusion;  // with the derived MC seed

  static RunContext build(const ExperimentConfig& cfg) {
    cfg.validate();
    RunContext rc;
    rc.config = cfg;
    rc.seeds = SeedPlan{cfg.master_seed};
    rc.suite = generate_world(cfg.world);
    rc.fusion = cfg.fusion;
    rc.fusion.rng_seed = rc.seeds.mc(cfg.fusion.rng_seed);

    Rng scene_rng(rc.seeds.scenes());
    for (std::size_t i = 0; i < cfg.n_scenes; ++i) rc.scenes.push_back(sample_scene(cfg.world, scene_rng));

    // One detector call per scene, before any decoding.
    rc.detector = std::make_shared<CountingDetector>(cfg.detector);
    for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
      Rng r(rc.seeds.detector(i));
      rc.beliefs.push_back((*rc.detector)(rc.scenes[i], r));
    }

    if (cfg.finetuned == FinetunedVariant::trained) {
      Rng corpus_rng(rc.seeds.corpus());
      const auto corpus = sample_mixture_corpus(rc.suite, cfg.training.corpus_scenes, corpus_rng, cfg.training.include_probes);
      TrainConfig tc = cfg.training.train;
      tc.seed = rc.seeds.train();
      tc.use_z = true;
      rc.trained = std::make_shared<TrainedParams>(train_finetuned(corpus, rc.suite, tc));
      tc.use_z = false;
      rc.trained_no_z = std::make_shared<TrainedParams>(train_finetuned(corpus, rc.suite, tc));
    }
    rc.rebind();
    return rc;
  }

  RunContext() = default;
  RunContext(const RunContext&) = delete;
  RunContext& operator=(const RunContext&) = delete;
  RunContext(RunContext&& o) noexcept { *this = std::move(o); }
  RunContext& operator=(RunContext&& o) noexcept {
    config = std::move(o.config);
    seeds = o.seeds;
    suite = std::move(o.suite);
    scenes = std::move(o.scenes);
    beliefs = std::move(o.beliefs);
    detector = std::move(o.detector);
    trained = std::move(o.trained);
    trained_no_z = std::move(o.trained_no_z);
    fusion = o.fusion;
    rebind();
    return *this;
  }

  CoadSession<FinetunedFn> session(std::size_t i) const {
    return CoadSession<FinetunedFn>(suite, scenes[i], beliefs[i], fusion, finetuned);
  }

  /// Next-token source for a scene. Sessions are created once per scene and
  /// captured by value.
  SourceFn source(SourceTag tag, std::size_t i) const {
    const WorldModelSuite* s = &suite;
    const Scene* scene = &scenes[i];
    switch (tag) {
      case SourceTag::oracle: {
        auto z = ObjectVector{scene->z_star}.as_reals();
        return [s, z](const Context& x) { return oracle_next(x, z, *s); };
      }
      case SourceTag::base: return [s, scene](const Context& x) { return pretrained_next(x, *scene, *s); };
      case SourceTag::mf_only: {
        auto sess = std::make_shared<CoadSession<FinetunedFn>>(session(i));
        return [sess](const Context& x) { return sess->marginal(x); };
      }
      case SourceTag::coad: {
        auto sess = std::make_shared<CoadSession<FinetunedFn>>(session(i));
        return [sess](const Context& x) { return sess->next(x); };
      }
      case SourceTag::coad_no_z: {
        auto mf = finetuned_no_z;
        auto cfg = fusion;
        return [s, scene, mf, cfg](const Context& x) { return coad_without_z_next(x, *scene, *s, mf, cfg); };
      }
    }
    throw ConfigError("unknown source");
  }

 private:
  // Finetuned callables hold pointers into this object; re-point them after a move.
  void rebind() {
    const WorldModelSuite* s = &suite;
    if (trained) {
      auto with_z = TrainedFinetuned{trained.get(), &s->vocab};
      auto without_z = TrainedFinetuned{trained_no_z.get(), &s->vocab};
      finetuned = with_z;
      const std::size_t C = config.world.n_categories;
      finetuned_no_z = [without_z, C](const Context& x, const Scene& sc, const TokenDist* p) {
        const std::vector<double> zeros(C, 0.0);
        return without_z(x, sc, zeros, p);
      };
    } else {
      finetuned = ConstructedFinetuned{s};
      finetuned_no_z = ConstructedFinetunedNoZ{s};
    }
  }
};

/// Runs fn(i) for i in [0, n) over `threads` workers. Results must be written
/// by index so the outcome is independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ============================================================================
// Run record
// ============================================================================

struct SourceResult {
  SourceTag tag = SourceTag::base;
  std::string status = "ok";
  std::vector<Caption> captions;
  std::vector<CaptionHallucination> per_caption;
  std::optional<ChairReport> chair;
  std::optional<Interval> chair_i_ci;
  std::vector<std::pair<PopeSplit, PopeReport>> pope;
  std::optional<double> divergence;
  std::size_t tokens = 0;
  double mean_step_ns = 0.0;
  std::vector<std::vector<double>> fused_dump;  // per token of the first scene, when requested
};

struct McConvergencePoint {
  std::size_t n_samples = 0;
  double rmse = 0.0;
};

struct RunRecord {
  ExperimentConfig config;
  std::string version = kVersion;
  std::vector<SourceResult> sources;
  std::map<std::string, Interval> chair_i_diff_ci;  // "a-b" -> interval of chair_i(a) - chair_i(b)
  std::size_t detector_invocations = 0;
  std::vector<McConvergencePoint> mc_convergence;

  const SourceResult* find(SourceTag t) const {
    for (const auto& s : sources) {
      if (s.tag == t) return &s;
    }
    return nullptr;
  }
};

namespace detail {

struct TimedSource {
  const SourceFn* fn;
  mutable std::size_t calls = 0;
  mutable std::chrono::nanoseconds elapsed{0};

  TokenDist operator()(const Context& x) const {
    const auto t0 = std::chrono::steady_clock::now();
    TokenDist p = (*fn)(x);
    elapsed += std::chrono::steady_clock::now() - t0;
    ++calls;
    return p;
  }
};

/// Oracle rollouts at temperature 1; every prefix is a candidate context.
inline std::vector<Context> divergence_contexts(const RunContext& rc, std::size_t i) {
  const auto& sp = rc.suite.vocab.special();
  const auto oracle = rc.source(SourceTag::oracle, i);
  DecodePolicy pol{DecodeMode::sample, 1.0, 64, rc.seeds.divergence(i)};
  const Caption cap = generate(rc.scenes[i], Context{sp.bos}, oracle, pol, sp);
  std::vector<Context> all;
  Context x{sp.bos};
  all.push_back(x);
  for (TokenId t : cap.tokens) {
    if (t == sp.eos) break;
    x.append(t);
    all.push_back(x);
  }
  const std::size_t want = rc.config.metrics.divergence_contexts;
  if (all.size() <= want) return all;
  std::vector<Context> out;
  for (std::size_t j = 0; j < want; ++j) out.push_back(all[j * all.size() / want]);
  return out;
}

inline std::vector<McConvergencePoint> mc_convergence_series(const RunContext& rc) {
  const std::vector<std::size_t> grid{1, 4, 16, 64, 256, 1024, 4096};
  constexpr std::size_t kReps = 16;
  const std::size_t n_cases = std::min<std::size_t>(rc.scenes.size(), 16);
  const auto& sp = rc.suite.vocab.special();
  std::vector<McConvergencePoint> out;
  for (std::size_t N : grid) {
    double sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n_cases; ++i) {
      const Context x{sp.bos};
      const TokenDist pp = pretrained_next(x, rc.scenes[i], rc.suite);
      const TokenDist exact = marginal_finetuned_exact(x, rc.scenes[i], rc.beliefs[i], rc.finetuned, &pp);
      for (std::size_t r = 0; r < kReps; ++r) {
        Rng rng(derive_seed(rc.fusion.rng_seed, "convergence", (N * 1000003 + i) * 64 + r));
        const TokenDist mc = marginal_finetuned_mc(x, rc.scenes[i], rc.beliefs[i], N, rng, rc.finetuned, &pp);
        for (std::size_t y = 0; y < mc.size(); ++y) sq += (mc[y] - exact[y]) * (mc[y] - exact[y]);
        count += mc.size();
      }
    }
    out.push_back({N, std::sqrt(sq / static_cast<double>(count))});
  }
  return out;
}

}  // namespace detail

/// Generates world, scenes and detections, then decodes and scores every source.
inline RunRecord run_experiment(const RunContext& rc) {
  const auto& cfg = rc.config;
  const auto& sp = rc.suite.vocab.special();
  RunRecord rec;
  rec.config = cfg;
  const std::size_t n = rc.scenes.size();

  std::vector<std::pair<PopeSpec, ProbeSet>> probe_sets;
  for (const auto& spec : cfg.metrics.pope) {
    Rng r(rc.seeds.pope(spec.split));
    probe_sets.emplace_back(spec, build_pope_probes(rc.scenes, spec.split, spec.k, r, rc.suite.config.cooccur));
  }
  std::vector<std::vector<Context>> div_contexts;
  if (cfg.metrics.divergence) {
    div_contexts.resize(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) { div_contexts[i] = detail::divergence_contexts(rc, i); });
  }

  for (SourceTag tag : cfg.sources) {
    SourceResult res;
    res.tag = tag;
    try {
      std::vector<Caption> captions(n);
      std::vector<std::size_t> calls(n, 0);
      std::vector<std::int64_t> ns(n, 0);
      std::vector<double> div_sum(n, 0.0);
      std::vector<std::size_t> div_count(n, 0);
      std::vector<std::vector<bool>> answers(probe_sets.size());
      for (std::size_t s = 0; s < probe_sets.size(); ++s) answers[s].assign(probe_sets[s].second.probes.size(), false);
      // Probes grouped by scene so each scene's source is built once.
      std::vector<std::vector<std::pair<std::size_t, std::size_t>>> probes_of(n);
      for (std::size_t s = 0; s < probe_sets.size(); ++s) {
        const auto& ps = probe_sets[s].second.probes;
        for (std::size_t p = 0; p < ps.size(); ++p) probes_of[ps[p].scene_index].push_back({s, p});
      }

      parallel_for(n, cfg.threads, [&](std::size_t i) {
        const SourceFn src = rc.source(tag, i);
        if (cfg.metrics.chair) {
          detail::TimedSource timed{&src};
          DecodePolicy pol = cfg.decode;
          pol.rng_seed = rc.seeds.decode(i, cfg.decode.rng_seed);
          captions[i] = generate(rc.scenes[i], Context{sp.bos}, timed, pol, sp, to_string(tag));
          calls[i] = timed.calls;
          ns[i] = timed.elapsed.count();
        }
        for (auto [s, p] : probes_of[i]) {
          answers[s][p] = answer_probe(probe_sets[s].second.probes[p].category, src, rc.suite.vocab).yes;
        }
        if (cfg.metrics.divergence) {
          const auto oracle = rc.source(SourceTag::oracle, i);
          for (const auto& x : div_contexts[i]) div_sum[i] += kl_next_token(src(x), oracle(x));
          div_count[i] = div_contexts[i].size();
        }
      });

      if (cfg.metrics.chair) {
        res.per_caption = chair_per_caption(captions, rc.scenes, rc.suite.vocab);
        res.chair = chair_from_counts(res.per_caption);
        std::int64_t total_ns = 0;
        for (std::size_t i = 0; i < n; ++i) {
          res.tokens += calls[i];
          total_ns += ns[i];
        }
        res.mean_step_ns = res.tokens ? static_cast<double>(total_ns) / static_cast<double>(res.tokens) : 0.0;
        if (cfg.dump_fused && n > 0) {
          const SourceFn src = rc.source(tag, 0);
          Context x{sp.bos};
          for (TokenId t : captions[0].tokens) {
            res.fused_dump.push_back(src(x).vec());
            x.append(t);
          }
        }
        res.captions = std::move(captions);
      }
      for (std::size_t s = 0; s < probe_sets.size(); ++s) {
        res.pope.emplace_back(probe_sets[s].first.split, pope_eval(probe_sets[s].second.probes, answers[s]));
      }
      if (cfg.metrics.divergence) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
          sum += div_sum[i];
          count += div_count[i];
        }
        res.divergence = count ? sum / static_cast<double>(count) : 0.0;
      }
    } catch (const std::exception& e) {
      res = SourceResult{};
      res.tag = tag;
      res.status = std::string("error: ") + e.what();
    }
    rec.sources.push_back(std::move(res));
  }

  // Paired bootstrap over scenes for chair_i.
  if (cfg.metrics.chair && cfg.bootstrap_resamples > 0) {
    std::vector<std::size_t> idx;
    std::vector<std::vector<double>> num, den;
    for (std::size_t k = 0; k < rec.sources.size(); ++k) {
      const auto& s = rec.sources[k];
      if (!s.chair) continue;
      idx.push_back(k);
      std::vector<double> a, b;
      for (const auto& h : s.per_caption) {
        a.push_back(static_cast<double>(h.hallucinated));
        b.push_back(static_cast<double>(h.mentions));
      }
      num.push_back(std::move(a));
      den.push_back(std::move(b));
    }
    const auto boot = paired_bootstrap_ratio(num, den, cfg.bootstrap_resamples, rc.seeds.bootstrap());
    for (std::size_t a = 0; a < idx.size(); ++a) {
      rec.sources[idx[a]].chair_i_ci = boot.ratio_ci[a];
      for (std::size_t b = 0; b < idx.size(); ++b) {
        if (a == b) continue;
        rec.chair_i_diff_ci[std::string(to_string(rec.sources[idx[a]].tag)) + "-" + to_string(rec.sources[idx[b]].tag)] =
            boot.diff_ci[a][b];
      }
    }
  }

  if (cfg.metrics.mc_convergence && cfg.world.n_categories <= kMaxExactCategories) {
    rec.mc_convergence = detail::mc_convergence_series(rc);
  }
  rec.detector_invocations = rc.detector->invocations();
  return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg) { return run_experiment(RunContext::build(cfg)); }

/// One run per alpha over the same world, scenes, detections and seeds.
inline std::vector<RunRecord> sweep_alpha(const ExperimentConfig& cfg, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("sweep: empty alpha grid");
  RunContext rc = RunContext::build(cfg);
  std::vector<RunRecord> out;
  for (double a : grid) {
    rc.config.fusion.alpha = a;
    rc.fusion.alpha = a;
    rc.fusion.validate(cfg.world.n_categories);
    out.push_back(run_experiment(rc));
  }
  return out;
}

// ============================================================================
// Throughput
// ============================================================================

struct ThroughputReport {
  std::vector<std::pair<SourceTag, double>> tokens_per_second;
  std::vector<std::pair<SourceTag, std::size_t>> tokens;
  double coad_to_base_ratio = 0.0;
  std::size_t detector_invocations = 0;
  std::size_t n_scenes = 0;

  double rate(SourceTag t) const {
    for (auto [tag, r] : tokens_per_second) {
      if (tag == t) return r;
    }
    return 0.0;
  }
};

/// Wall-clock generation rate for base and COAD on the same scenes. Scenes are
/// cycled until at least n_tokens have been generated per source; detection
/// happens once per scene when the run context is built.
inline ThroughputReport bench_throughput(const ExperimentConfig& cfg, std::size_t n_tokens) {
  if (n_tokens < 1000) throw ConfigError("bench: n_tokens must be >= 1000");
  const RunContext rc = RunContext::build(cfg);
  const auto& sp = rc.suite.vocab.special();
  ThroughputReport out;
  out.n_scenes = rc.scenes.size();

  auto measure = [&](SourceTag tag) {
    std::size_t produced = 0;
    std::chrono::nanoseconds elapsed{0};
    for (std::size_t round = 0; produced < n_tokens; ++round) {
      const std::size_t i = round % rc.scenes.size();
      const SourceFn src = rc.source(tag, i);
      DecodePolicy pol = cfg.decode;
      pol.rng_seed = rc.seeds.decode(round, cfg.decode.rng_seed);
      const auto t0 = std::chrono::steady_clock::now();
      const Caption cap = generate(rc.scenes[i], Context{sp.bos}, src, pol, sp);
      elapsed += std::chrono::steady_clock::now() - t0;
      produced += cap.tokens.size();
    }
    const double secs = std::chrono::duration<double>(elapsed).count();
    out.tokens.emplace_back(tag, produced);
    out.tokens_per_second.emplace_back(tag, secs > 0.0 ? static_cast<double>(produced) / secs : 0.0);
  };
  // Warm-up so neither source pays first-touch costs.
  {
    const SourceFn src = rc.source(SourceTag::coad, 0);
    generate(rc.scenes[0], Context{sp.bos}, src, cfg.decode, sp);
  }
  measure(SourceTag::base);
  measure(SourceTag::coad);
  const double base = out.rate(SourceTag::base);
  out.coad_to_base_ratio = base > 0.0 ? out.rate(SourceTag::coad) / base : 0.0;
  out.detector_invocations = rc.detector->invocations();
  return out;
}

// ============================================================================
// Serialization and reports
// ============================================================================

namespace detail {

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string format_value(const json& v) {
  if (v.is_null()) return "NA";
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v.get<double>());
    return buf;
  }
  return v.get<std::string>();
}

}  // namespace detail

inline json record_to_json(const RunRecord& r) {
  json sources = json::array();
  for (const auto& s : r.sources) {
    json js{{"tag", to_string(s.tag)}, {"status", s.status}};
    if (s.chair) {
      const auto& c = *s.chair;
      js["chair"] = {{"chair_s", c.chair_s},
                     {"chair_s_pct", c.chair_s_pct()},
                     {"chair_i", c.chair_i},
                     {"chair_i_pct", c.chair_i_pct()},
                     {"n_captions", c.n_captions},
                     {"n_mentions", c.n_mentions},
                     {"n_hallucinated_mentions", c.n_hallucinated_mentions},
                     {"n_hallucinated_captions", c.n_hallucinated_captions},
                     {"zero_mentions", c.zero_mentions}};
      if (s.chair_i_ci) {
        js["chair"]["chair_i_ci_lo"] = s.chair_i_ci->lo;
        js["chair"]["chair_i_ci_hi"] = s.chair_i_ci->hi;
      }
    }
    if (!s.pope.empty()) {
      json jp = json::object();
      for (const auto& [split, p] : s.pope) {
        jp[to_string(split)] = {{"accuracy", detail::optional_json(p.accuracy)},
                                {"precision", detail::optional_json(p.precision)},
                                {"recall", detail::optional_json(p.recall)},
                                {"f1", detail::optional_json(p.f1)},
                                {"yes_ratio", detail::optional_json(p.yes_ratio)},
                                {"tp", p.tp},
                                {"fp", p.fp},
                                {"fn", p.fn},
                                {"tn", p.tn}};
      }
      js["pope"] = jp;
    }
    if (s.divergence) js["divergence"] = {{"kl", *s.divergence}};
    js["timing"] = {{"tokens", s.tokens}, {"mean_step_ns", s.mean_step_ns}};
    if (!s.fused_dump.empty()) js["fused_dump"] = s.fused_dump;
    sources.push_back(std::move(js));
  }
  json diffs = json::object();
  for (const auto& [k, v] : r.chair_i_diff_ci) diffs[k] = {{"lo", v.lo}, {"hi", v.hi}};
  json conv = json::array();
  for (const auto& p : r.mc_convergence) conv.push_back({{"n_samples", p.n_samples}, {"rmse", p.rmse}});
  return {{"version", r.version},
          {"config", experiment_to_json(r.config)},
          {"seeds", {{"master", r.config.master_seed}, {"world", r.config.world.seed}}},
          {"detector_invocations", r.detector_invocations},
          {"sources", sources},
          {"chair_i_diff_ci", diffs},
          {"mc_convergence", conv}};
}

/// Long-format metric rows (source, metric, value) from a persisted record.
/// Timing fields are excluded so the rows are a pure function of the config.
inline std::vector<std::array<std::string, 3>> metric_rows(const json& record) {
  std::vector<std::array<std::string, 3>> rows;
  for (const auto& s : record.at("sources")) {
    const std::string tag = s.at("tag").get<std::string>();
    rows.push_back({tag, "status", s.at("status").get<std::string>()});
    if (s.contains("chair")) {
      for (const auto& [k, v] : s.at("chair").items()) rows.push_back({tag, "chair." + k, detail::format_value(v)});
    }
    if (s.contains("pope")) {
      for (const auto& [split, rep] : s.at("pope").items()) {
        for (const auto& [k, v] : rep.items()) rows.push_back({tag, "pope." + split + "." + k, detail::format_value(v)});
      }
    }
    if (s.contains("divergence")) rows.push_back({tag, "divergence.kl", detail::format_value(s.at("divergence").at("kl"))});
  }
  for (const auto& [k, v] : record.at("chair_i_diff_ci").items()) {
    rows.push_back({k, "chair.chair_i_diff_ci_lo", detail::format_value(v.at("lo"))});
    rows.push_back({k, "chair.chair_i_diff_ci_hi", detail::format_value(v.at("hi"))});
  }
  return rows;
}

inline std::string metrics_csv(const json& record) {
  std::string out = "source,metric,value\n";
  for (const auto& r : metric_rows(record)) out += r[0] + "," + r[1] + "," + r[2] + "\n";
  return out;
}

inline std::string sweep_csv(const std::vector<json>& records) {
  std::string out = "alpha,source,metric,value\n";
  for (const auto& rec : records) {
    const std::string alpha = detail::format_value(rec.at("config").at("fusion").at("alpha"));
    for (const auto& r : metric_rows(rec)) out += alpha + "," + r[0] + "," + r[1] + "," + r[2] + "\n";
  }
  return out;
}

inline std::string mc_convergence_csv(const std::vector<json>& records) {
  std::string out = "alpha,n_samples,rmse\n";
  for (const auto& rec : records) {
    const std::string alpha = detail::format_value(rec.at("config").at("fusion").at("alpha"));
    for (const auto& p : rec.at("mc_convergence")) {
      out += alpha + "," + detail::format_value(p.at("n_samples")) + "," + detail::format_value(p.at("rmse")) + "\n";
    }
  }
  return out;
}

inline std::string captions_jsonl(const RunRecord& r, const Vocab& vocab) {
  std::string out;
  for (const auto& s : r.sources) {
    for (const auto& c : s.captions) {
      json tokens = json::array();
      for (TokenId t : c.tokens) tokens.push_back(vocab.name(t));
      out += json{{"scene_seed", c.scene_ref}, {"source", c.source_tag}, {"tokens", tokens}}.dump() + "\n";
    }
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// Writes metrics.csv for a single record, sweep.csv for several, and
/// mc_convergence.csv whenever a record carries a convergence series.
inline std::vector<std::filesystem::path> emit_report(const std::vector<json>& records, const std::filesystem::path& dir) {
  if (records.empty()) throw ConfigError("report: no records");
  std::vector<std::filesystem::path> written;
  if (records.size() == 1) {
    write_file(dir / "metrics.csv", metrics_csv(records.front()));
    written.push_back(dir / "metrics.csv");
  } else {
    write_file(dir / "sweep.csv", sweep_csv(records));
    written.push_back(dir / "sweep.csv");
  }
  const bool any_conv = std::any_of(records.begin(), records.end(),
                                    [](const json& r) { return r.contains("mc_convergence") && !r.at("mc_convergence").empty(); });
  if (any_conv) {
    write_file(dir / "mc_convergence.csv", mc_convergence_csv(records));
    written.push_back(dir / "mc_convergence.csv");
  }
  return written;
}

/// run.json, metrics.csv, captions.jsonl (and mc_convergence.csv) for one run.
inline void persist_run(const RunRecord& r, const Vocab& vocab, const std::filesystem::path& dir) {
  const json j = record_to_json(r);
  write_file(dir / "run.json", j.dump(2) + "\n");
  write_file(dir / "captions.jsonl", captions_jsonl(r, vocab));
  emit_report({j}, dir);
}

/// One subdirectory per alpha plus sweep.csv at the top level.
inline void persist_sweep(const std::vector<RunRecord>& records, const Vocab& vocab, const std::filesystem::path& dir) {
  std::vector<json> js;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto sub = dir / ("alpha_" + std::to_string(k));
    persist_run(records[k], vocab, sub);
    js.push_back(record_to_json(records[k]));
  }
  emit_report(js, dir);
}

}  // namespace coad
