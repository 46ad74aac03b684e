#pragma once

// Experiment configuration and its JSON form. Parsing accepts shorthand
// (scalar rates broadcast over categories, randomly placed co-occurrence
// links); serialization always writes the fully resolved values, so a
// snapshot parses back to an identical configuration.

#include "coad/fusion.hpp"
#include "coad/metrics.hpp"
#include "coad/training.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace coad {

using json = nlohmann::json;

enum class SourceTag { oracle, base, mf_only, coad, coad_no_z };

inline const char* to_string(SourceTag t) {
  switch (t) {
    case SourceTag::oracle: return "oracle";
    case SourceTag::base: return "base";
    case SourceTag::mf_only: return "mf_only";
    case SourceTag::coad: return "coad";
    case SourceTag::coad_no_z: return "coad_no_z";
  }
  return "?";
}

inline SourceTag parse_source_tag(std::string_view s) {
  if (s == "oracle") return SourceTag::oracle;
  if (s == "base") return SourceTag::base;
  if (s == "mf_only") return SourceTag::mf_only;
  if (s == "coad") return SourceTag::coad;
  if (s == "coad_no_z") return SourceTag::coad_no_z;
  throw ConfigError("unknown source tag: " + std::string(s));
}

inline std::vector<SourceTag> parse_source_list(std::string_view csv) {
  std::vector<SourceTag> out;
  std::string item;
  std::istringstream in{std::string(csv)};
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(parse_source_tag(item));
  }
  return out;
}

struct PopeSpec {
  PopeSplit split = PopeSplit::adversarial;
  std::size_t k = 3;
};

struct MetricsSpec {
  bool chair = true;
  std::vector<PopeSpec> pope;
  bool divergence = false;
  std::size_t divergence_contexts = 4;  // per scene, drawn from oracle rollouts
  bool mc_convergence = false;
};

enum class FinetunedVariant { constructed, trained };

struct TrainingSpec {
  std::size_t corpus_scenes = 2000;
  bool include_probes = true;
  TrainConfig train;
};

struct ExperimentConfig {
  WorldConfig world = WorldConfig::clean(8, 8, 7);
  DetectorConfig detector = DetectorConfig::noiseless(8);
  FusionConfig fusion;
  DecodePolicy decode;
  std::size_t n_scenes = 100;
  std::vector<SourceTag> sources{SourceTag::base, SourceTag::mf_only, SourceTag::coad};
  MetricsSpec metrics;
  FinetunedVariant finetuned = FinetunedVariant::constructed;
  TrainingSpec training;
  std::string output_dir = "out";
  std::uint64_t master_seed = 1;
  std::size_t bootstrap_resamples = 10000;
  std::size_t threads = 1;
  bool dump_fused = false;

  void validate() const {
    world.validate();
    detector.validate(world.n_categories);
    fusion.validate(world.n_categories);
    decode.validate();
    if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
    if (sources.empty()) throw ConfigError("sources must be nonempty");
    for (const auto& p : metrics.pope) {
      if (p.k < 1) throw ConfigError("pope k must be >= 1");
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

// ============================================================================
// JSON
// ============================================================================

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

/// Scalar broadcast to length n, or an explicit array of length n.
inline std::vector<double> per_category(const json& j, std::size_t n, const char* what) {
  if (j.is_number()) return std::vector<double>(n, j.get<double>());
  auto v = j.get<std::vector<double>>();
  if (v.size() != n) throw ConfigError(std::string(what) + ": expected " + std::to_string(n) + " entries");
  return v;
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

inline Matrix matrix_from_json(const json& j, std::size_t n) {
  Matrix m(n, n, 0.0);
  if (j.size() != n) throw ConfigError("cooccur: expected " + std::to_string(n) + " rows");
  for (std::size_t r = 0; r < n; ++r) {
    auto row = j.at(r).get<std::vector<double>>();
    if (row.size() != n) throw ConfigError("cooccur: ragged row");
    for (std::size_t c = 0; c < n; ++c) m(r, c) = row[c];
  }
  return m;
}

}  // namespace detail

inline WorldConfig world_from_json(const json& j) {
  WorldConfig w;
  w.n_categories = detail::get_or<std::size_t>(j, "categories", w.n_categories);
  w.n_fillers = detail::get_or<std::size_t>(j, "fillers", w.n_fillers);
  w.seed = detail::get_or<std::uint64_t>(j, "seed", w.seed);
  w.markov_k = detail::get_or<std::size_t>(j, "markov_k", w.markov_k);
  w.gamma = detail::get_or<double>(j, "gamma", w.gamma);
  w.category_names = detail::get_or<std::vector<std::string>>(j, "category_names", {});
  const std::size_t C = w.n_categories;

  w.presence_prior = j.contains("presence_prior") ? detail::per_category(j.at("presence_prior"), C, "presence_prior")
                                                  : std::vector<double>(C, 0.3);
  w.perception_noise.assign(C, PerceptionNoise{});
  if (j.contains("perception_noise")) {
    const json& pn = j.at("perception_noise");
    if (pn.is_array()) {
      if (pn.size() != C) throw ConfigError("perception_noise: expected C entries");
      for (std::size_t c = 0; c < C; ++c) {
        w.perception_noise[c] = {detail::get_or<double>(pn[c], "fpr", 0.0), detail::get_or<double>(pn[c], "fnr", 0.0)};
      }
    } else {
      w.perception_noise.assign(C, PerceptionNoise{detail::get_or<double>(pn, "fpr", 0.0), detail::get_or<double>(pn, "fnr", 0.0)});
    }
  }
  if (j.contains("cooccur")) {
    w.cooccur = detail::matrix_from_json(j.at("cooccur"), C);
  } else if (j.contains("cooccur_random")) {
    const json& cr = j.at("cooccur_random");
    WorldConfig generated = make_confounded_world(C, w.n_fillers, w.seed, detail::get_or<std::size_t>(cr, "pairs", C),
                                                  detail::get_or<double>(cr, "strength", 27.0), 0.0, 0.0);
    w.cooccur = generated.cooccur;
  } else {
    w.cooccur = Matrix(C, C, 0.0);
  }

  const json scores = j.value("scores", json::object());
  w.absent_penalty = detail::get_or(scores, "absent_penalty", w.absent_penalty);
  w.bigram_scale = detail::get_or(scores, "bigram_scale", w.bigram_scale);
  w.object_bias = detail::get_or(scores, "object_bias", w.object_bias);
  w.filler_bias = detail::get_or(scores, "filler_bias", w.filler_bias);
  w.eos_bias = detail::get_or(scores, "eos_bias", w.eos_bias);
  w.eos_per_mention = detail::get_or(scores, "eos_per_mention", w.eos_per_mention);
  w.eos_per_token = detail::get_or(scores, "eos_per_token", w.eos_per_token);
  w.repeat_penalty = detail::get_or(scores, "repeat_penalty", w.repeat_penalty);
  w.filler_conditioning_scale = detail::get_or(scores, "filler_conditioning_scale", w.filler_conditioning_scale);
  w.probe_scale = detail::get_or(scores, "probe_scale", w.probe_scale);
  w.probe_eos_score = detail::get_or(scores, "probe_eos_score", w.probe_eos_score);
  w.probe_cooccur_weight = detail::get_or(scores, "probe_cooccur_weight", w.probe_cooccur_weight);
  return w;
}

inline json world_to_json(const WorldConfig& w) {
  json pn = json::array();
  for (const auto& n : w.perception_noise) pn.push_back({{"fpr", n.fpr}, {"fnr", n.fnr}});
  return {
      {"categories", w.n_categories},
      {"fillers", w.n_fillers},
      {"seed", w.seed},
      {"markov_k", w.markov_k},
      {"gamma", w.gamma},
      {"category_names", w.resolved_names()},
      {"presence_prior", w.presence_prior},
      {"perception_noise", pn},
      {"cooccur", detail::matrix_to_json(w.cooccur)},
      {"scores",
       {{"absent_penalty", w.absent_penalty},
        {"bigram_scale", w.bigram_scale},
        {"object_bias", w.object_bias},
        {"filler_bias", w.filler_bias},
        {"eos_bias", w.eos_bias},
        {"eos_per_mention", w.eos_per_mention},
        {"eos_per_token", w.eos_per_token},
        {"repeat_penalty", w.repeat_penalty},
        {"filler_conditioning_scale", w.filler_conditioning_scale},
        {"probe_scale", w.probe_scale},
        {"probe_eos_score", w.probe_eos_score},
        {"probe_cooccur_weight", w.probe_cooccur_weight}}},
  };
}

inline DetectorConfig detector_from_json(const json& j, std::size_t C) {
  DetectorConfig d = DetectorConfig::noiseless(C);
  if (j.contains("tpr")) d.tpr = detail::per_category(j.at("tpr"), C, "detector.tpr");
  if (j.contains("fpr")) d.fpr = detail::per_category(j.at("fpr"), C, "detector.fpr");
  d.confidence_sharpness = detail::get_or(j, "confidence_sharpness", d.confidence_sharpness);
  return d;
}

inline json detector_to_json(const DetectorConfig& d) {
  return {{"tpr", d.tpr}, {"fpr", d.fpr}, {"confidence_sharpness", d.confidence_sharpness}};
}

inline FusionConfig fusion_from_json(const json& j) {
  FusionConfig f;
  f.alpha = detail::get_or(j, "alpha", f.alpha);
  const std::string mode = detail::get_or<std::string>(j, "marginal_mode", to_string(f.marginal_mode));
  if (mode == "exact") f.marginal_mode = MarginalMode::exact;
  else if (mode == "monte_carlo") f.marginal_mode = MarginalMode::monte_carlo;
  else if (mode == "soft") f.marginal_mode = MarginalMode::soft;
  else throw ConfigError("unknown marginal_mode: " + mode);
  f.mc_samples = detail::get_or(j, "mc_samples", f.mc_samples);
  const std::string space = detail::get_or<std::string>(j, "space", to_string(f.space));
  if (space == "probability") f.space = FusionSpace::probability;
  else if (space == "logit") f.space = FusionSpace::logit;
  else throw ConfigError("unknown fusion space: " + space);
  f.clamp_floor = detail::get_or(j, "clamp_floor", f.clamp_floor);
  f.logit_floor = detail::get_or(j, "logit_floor", f.logit_floor);
  f.rng_seed = detail::get_or(j, "rng_seed", f.rng_seed);
  return f;
}

inline json fusion_to_json(const FusionConfig& f) {
  return {{"alpha", f.alpha},           {"marginal_mode", to_string(f.marginal_mode)},
          {"mc_samples", f.mc_samples}, {"space", to_string(f.space)},
          {"clamp_floor", f.clamp_floor}, {"logit_floor", f.logit_floor},
          {"rng_seed", f.rng_seed}};
}

inline DecodePolicy decode_from_json(const json& j) {
  DecodePolicy d;
  const std::string mode = detail::get_or<std::string>(j, "mode", "sample");
  if (mode == "greedy") d.mode = DecodeMode::greedy;
  else if (mode == "sample") d.mode = DecodeMode::sample;
  else throw ConfigError("unknown decode mode: " + mode);
  d.temperature = detail::get_or(j, "temperature", d.temperature);
  d.max_tokens = detail::get_or(j, "max_tokens", d.max_tokens);
  d.rng_seed = detail::get_or(j, "rng_seed", d.rng_seed);
  return d;
}

inline json decode_to_json(const DecodePolicy& d) {
  return {{"mode", d.mode == DecodeMode::greedy ? "greedy" : "sample"},
          {"temperature", d.temperature},
          {"max_tokens", d.max_tokens},
          {"rng_seed", d.rng_seed}};
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.steps = detail::get_or(j, "steps", t.steps);
  t.learning_rate = detail::get_or(j, "learning_rate", t.learning_rate);
  t.context_noise = detail::get_or(j, "context_noise", t.context_noise);
  t.noise_sigma = detail::get_or(j, "noise_sigma", t.noise_sigma);
  t.noise_probability = detail::get_or(j, "noise_probability", t.noise_probability);
  return t;
}

inline ExperimentConfig experiment_from_json(const json& j) {
  try {
    ExperimentConfig cfg;
    cfg.world = world_from_json(j.value("world", json::object()));
    cfg.detector = detector_from_json(j.value("detector", json::object()), cfg.world.n_categories);
    cfg.fusion = fusion_from_json(j.value("fusion", json::object()));
    cfg.decode = decode_from_json(j.value("decode", json::object()));
    cfg.n_scenes = detail::get_or(j, "n_scenes", cfg.n_scenes);
    if (j.contains("sources")) {
      cfg.sources.clear();
      for (const auto& s : j.at("sources")) cfg.sources.push_back(parse_source_tag(s.get<std::string>()));
    }
    const json m = j.value("metrics", json::object());
    cfg.metrics.chair = detail::get_or(m, "chair", cfg.metrics.chair);
    cfg.metrics.divergence = detail::get_or(m, "divergence", cfg.metrics.divergence);
    cfg.metrics.divergence_contexts = detail::get_or(m, "divergence_contexts", cfg.metrics.divergence_contexts);
    cfg.metrics.mc_convergence = detail::get_or(m, "mc_convergence", cfg.metrics.mc_convergence);
    if (m.contains("pope")) {
      for (const auto& p : m.at("pope")) {
        cfg.metrics.pope.push_back(PopeSpec{parse_pope_split(p.at("split").get<std::string>()),
                                            detail::get_or<std::size_t>(p, "k", 3)});
      }
    }
    const std::string variant = detail::get_or<std::string>(j, "finetuned", "constructed");
    if (variant == "constructed") cfg.finetuned = FinetunedVariant::constructed;
    else if (variant == "trained") cfg.finetuned = FinetunedVariant::trained;
    else throw ConfigError("unknown finetuned variant: " + variant);
    const json t = j.value("training", json::object());
    cfg.training.corpus_scenes = detail::get_or(t, "corpus_scenes", cfg.training.corpus_scenes);
    cfg.training.include_probes = detail::get_or(t, "include_probes", cfg.training.include_probes);
    cfg.training.train = train_from_json(t);
    cfg.output_dir = detail::get_or<std::string>(j, "output_dir", cfg.output_dir);
    cfg.master_seed = detail::get_or(j, "master_seed", cfg.master_seed);
    cfg.bootstrap_resamples = detail::get_or(j, "bootstrap_resamples", cfg.bootstrap_resamples);
    cfg.threads = detail::get_or(j, "threads", cfg.threads);
    cfg.dump_fused = detail::get_or(j, "dump_fused", cfg.dump_fused);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline json experiment_to_json(const ExperimentConfig& c) {
  json sources = json::array();
  for (auto s : c.sources) sources.push_back(to_string(s));
  json pope = json::array();
  for (const auto& p : c.metrics.pope) pope.push_back({{"split", to_string(p.split)}, {"k", p.k}});
  const auto& t = c.training.train;
  return {
      {"world", world_to_json(c.world)},
      {"detector", detector_to_json(c.detector)},
      {"fusion", fusion_to_json(c.fusion)},
      {"decode", decode_to_json(c.decode)},
      {"n_scenes", c.n_scenes},
      {"sources", sources},
      {"metrics",
       {{"chair", c.metrics.chair},
        {"pope", pope},
        {"divergence", c.metrics.divergence},
        {"divergence_contexts", c.metrics.divergence_contexts},
        {"mc_convergence", c.metrics.mc_convergence}}},
      {"finetuned", c.finetuned == FinetunedVariant::trained ? "trained" : "constructed"},
      {"training",
       {{"corpus_scenes", c.training.corpus_scenes},
        {"include_probes", c.training.include_probes},
        {"steps", t.steps},
        {"learning_rate", t.learning_rate},
        {"context_noise", t.context_noise},
        {"noise_sigma", t.noise_sigma},
        {"noise_probability", t.noise_probability}}},
      {"output_dir", c.output_dir},
      {"master_seed", c.master_seed},
      {"bootstrap_resamples", c.bootstrap_resamples},
      {"threads", c.threads},
      {"dump_fused", c.dump_fused},
  };
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return experiment_from_json(j);
}

}  // namespace coad
