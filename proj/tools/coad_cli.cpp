// coad: command-line front end for the causal decoding testbed.
//
//   coad gen-world --config cfg.json
//   coad run       --config cfg.json [--seed N] [--out DIR] [--sources a,b] [--alpha A]
//   coad sweep     --config cfg.json --alpha 0,0.5,1 [--out DIR]
//   coad bench     --config cfg.json [--tokens N]
//   coad report    --in run.json [--in run2.json ...] --out DIR
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include "coad/coad.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

using namespace coad;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> sources;
  std::vector<double> alpha;
};

ExperimentConfig load(const Overrides& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_experiment_config(o.config_path);
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.sources) cfg.sources = parse_source_list(*o.sources);
  cfg.validate();
  return cfg;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void print_summary(const RunRecord& rec) {
  for (const auto& s : rec.sources) {
    std::cout << to_string(s.tag) << ": " << s.status;
    if (s.chair) {
      std::cout << "  CHAIR_S " << fmt(s.chair->chair_s_pct()) << "%  CHAIR_I " << fmt(s.chair->chair_i_pct()) << "%";
    }
    for (const auto& [split, p] : s.pope) {
      std::cout << "  POPE-" << to_string(split) << " F1 " << (p.f1 ? fmt(*p.f1) : "NA");
    }
    if (s.divergence) std::cout << "  KL " << fmt(*s.divergence);
    std::cout << "\n";
  }
}

int cmd_gen_world(const Overrides& o) {
  const ExperimentConfig cfg = load(o);
  const WorldModelSuite suite = generate_world(cfg.world);
  json summary{{"version", kVersion},
               {"vocab", suite.vocab.names()},
               {"categories", cfg.world.n_categories},
               {"gamma", suite.gamma},
               {"inversion_alpha", inversion_alpha(suite.gamma)},
               {"world", world_to_json(cfg.world)},
               {"detector", detector_to_json(cfg.detector)}};
  json links = json::array();
  for (std::size_t a = 0; a < cfg.world.n_categories; ++a) {
    for (std::size_t b = 0; b < cfg.world.n_categories; ++b) {
      if (cfg.world.cooccur(a, b) > 0.0) {
        links.push_back({{"from", suite.vocab.category_name(a)}, {"to", suite.vocab.category_name(b)}, {"boost", cfg.world.cooccur(a, b)}});
      }
    }
  }
  summary["cooccur_links"] = links;
  Rng rng(SeedPlan{cfg.master_seed}.scenes());
  const Scene scene = sample_scene(cfg.world, rng);
  Rng drng(SeedPlan{cfg.master_seed}.detector(0));
  summary["example_scene"] = {{"z_star", scene.z_star},
                              {"z_tilde", format_belief(detect(scene, cfg.detector, drng), suite.vocab)}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_run(const Overrides& o) {
  ExperimentConfig cfg = load(o);
  if (!o.alpha.empty()) cfg.fusion.alpha = o.alpha.front();
  cfg.validate();
  const RunContext rc = RunContext::build(cfg);
  const RunRecord rec = run_experiment(rc);
  persist_run(rec, rc.suite.vocab, cfg.output_dir);
  print_summary(rec);
  std::cout << "wrote " << cfg.output_dir << "/{run.json,metrics.csv,captions.jsonl}\n";
  return 0;
}

int cmd_sweep(const Overrides& o) {
  const ExperimentConfig cfg = load(o);
  if (o.alpha.empty()) throw ConfigError("sweep: --alpha grid required");
  const auto records = sweep_alpha(cfg, o.alpha);
  const WorldModelSuite suite = generate_world(cfg.world);
  persist_sweep(records, suite.vocab, cfg.output_dir);
  for (const auto& r : records) {
    std::cout << "alpha=" << r.config.fusion.alpha << "\n";
    print_summary(r);
  }
  std::cout << "wrote " << cfg.output_dir << "/sweep.csv\n";
  return 0;
}

int cmd_bench(const Overrides& o, std::size_t tokens) {
  const ExperimentConfig cfg = load(o);
  const ThroughputReport r = bench_throughput(cfg, tokens);
  json j{{"mode", to_string(cfg.fusion.marginal_mode)},
         {"base_tokens_per_s", r.rate(SourceTag::base)},
         {"coad_tokens_per_s", r.rate(SourceTag::coad)},
         {"coad_to_base_ratio", r.coad_to_base_ratio},
         {"detector_invocations", r.detector_invocations},
         {"n_scenes", r.n_scenes}};
  std::cout << j.dump(2) << "\n";
  if (o.out) write_file(std::filesystem::path(*o.out) / "bench.json", j.dump(2) + "\n");
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  if (inputs.empty()) throw ConfigError("report: at least one --in record required");
  std::vector<json> records;
  for (const auto& p : inputs) records.push_back(read_json_file(p));
  for (const auto& f : emit_report(records, out)) std::cout << "wrote " << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal object-aware decoding testbed"};
  app.require_subcommand(1);
  Overrides o;
  std::uint64_t seed = 0;
  std::string out;
  std::string sources;
  std::string alpha_csv;
  std::size_t tokens = 2000;
  std::vector<std::string> inputs;

  std::vector<CLI::Option*> seed_opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment config (JSON)");
    seed_opts.push_back(sub->add_option("--seed", seed, "override master_seed"));
    sub->add_option("--out", out, "output directory");
    sub->add_option("--sources", sources, "comma-separated sources: oracle,base,mf_only,coad,coad_no_z");
    sub->add_option("--alpha", alpha_csv, "alpha value, or comma-separated grid for sweep");
  };
  auto* gen = app.add_subcommand("gen-world", "print a world summary");
  auto* run = app.add_subcommand("run", "run one experiment");
  auto* sweep = app.add_subcommand("sweep", "run an alpha sweep");
  auto* bench = app.add_subcommand("bench", "measure decoding throughput");
  auto* report = app.add_subcommand("report", "re-emit CSV reports from run.json records");
  for (auto* s : {gen, run, sweep, bench}) add_common(s);
  bench->add_option("--tokens", tokens, "tokens per source (>= 1000)");
  report->add_option("--in", inputs, "run.json record(s)")->required();
  report->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    for (auto* opt : seed_opts) {
      if (opt->count() > 0) o.seed = seed;
    }
    if (!out.empty()) o.out = out;
    if (!sources.empty()) o.sources = sources;
    if (!alpha_csv.empty()) {
      std::istringstream in(alpha_csv);
      std::string item;
      while (std::getline(in, item, ',')) {
        try {
          o.alpha.push_back(std::stod(item));
        } catch (const std::exception&) {
          throw ConfigError("invalid alpha value: " + item);
        }
      }
    }
    if (app.got_subcommand(gen)) return cmd_gen_world(o);
    if (app.got_subcommand(run)) return cmd_run(o);
    if (app.got_subcommand(sweep)) return cmd_sweep(o);
    if (app.got_subcommand(bench)) return cmd_bench(o, tokens);
    if (app.got_subcommand(report)) return cmd_report(inputs, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
