#include <flowsqueeze/pipeline.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace flowsqueeze;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitCheck = 4;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           std::optional<std::uint64_t> config_value = {}) {
  if (flag) return *flag;
  if (config_value) return *config_value;
  if (const char* env = std::getenv("FLOWSQUEEZE_SEED")) {
    return std::stoull(env);
  }
  return 0;
}

/// "0..20" (half-open), "1,4,9", or a single value.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  auto dots = text.find("..");
  if (dots != std::string::npos) {
    std::uint64_t lo = std::stoull(text.substr(0, dots));
    std::uint64_t hi = std::stoull(text.substr(dots + 2));
    for (std::uint64_t s = lo; s < hi; ++s) out.push_back(s);
    return out;
  }
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoull(tok));
  }
  return out;
}

bool glob_match(const std::string& pattern, const std::string& name) {
  // '*' wildcards only
  std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() &&
        (pattern[p] == name[n] || pattern[p] == '?')) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  if (pattern.find('*') == std::string::npos &&
      pattern.find('?') == std::string::npos) {
    return {pattern};
  }
  fs::path p(pattern);
  fs::path dir = p.parent_path().empty() ? "." : p.parent_path();
  std::string name_pat = p.filename().string();
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (glob_match(name_pat, entry.path().filename().string())) {
      out.push_back(entry.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

EnvConfig env_config_from_file(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  EnvConfig c;
  c.depth = j.value("depth", c.depth);
  c.branching = j.value("branching", c.branching);
  c.n_traces_correct = j.value("n_traces_correct", c.n_traces_correct);
  c.tail_mass = j.value("tail_mass", c.tail_mass);
  c.logit_std = j.value("logit_std", c.logit_std);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

SparseUpdateConfig extinction_config_from_file(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  SparseUpdateConfig c;
  c.beta = j.value("beta", c.beta);
  c.temperature = j.value("temperature", c.temperature);
  c.n_rollouts = j.value("n_rollouts", c.n_rollouts);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.reward_correct = j.value("reward_correct", c.reward_correct);
  c.reward_incorrect = j.value("reward_incorrect", c.reward_incorrect);
  c.n_samples_per_step =
      j.value("n_samples_per_step", c.n_samples_per_step);
  c.pool_temperature = j.value("pool_temperature", c.pool_temperature);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowsqueeze: extinction dynamics and flow-guided search on "
               "synthetic reasoning trees"};
  app.require_subcommand(1);

  // ---- env ----------------------------------------------------------------
  auto* env_cmd = app.add_subcommand("env", "environment generation");
  env_cmd->require_subcommand(1);
  auto* env_gen = env_cmd->add_subcommand("gen", "generate an environment");
  std::string env_config_path, env_out = "env.json";
  std::optional<std::uint64_t> seed_flag;
  env_gen->add_option("--config", env_config_path, "env config JSON");
  env_gen->add_option("--seed", seed_flag, "seed (overrides config)");
  env_gen->add_option("--out", env_out, "output path");

  // ---- extinction -----------------------------------------------------------
  auto* ext_cmd = app.add_subcommand("extinction", "sparse-update dynamics");
  ext_cmd->require_subcommand(1);
  auto* ext_run = ext_cmd->add_subcommand("run", "run the dynamics");
  std::string ext_envs, ext_config_path, ext_seeds = "0..1",
              ext_out = "log.csv";
  ext_run->add_option("--envs", ext_envs, "env file or glob")->required();
  ext_run->add_option("--config", ext_config_path, "dynamics config JSON");
  ext_run->add_option("--seeds", ext_seeds, "seed range a..b or list");
  ext_run->add_option("--out", ext_out, "output CSV");
  auto* ext_plot = ext_cmd->add_subcommand("plot", "plot a dynamics log");
  std::string plot_in, plot_out = "fig1b.svg";
  ext_plot->add_option("--in", plot_in, "log CSV")->required();
  ext_plot->add_option("--out", plot_out, "output SVG");

  // ---- sdf ------------------------------------------------------------------
  auto* sdf_cmd = app.add_subcommand("sdf", "sparse deep fork graphs");
  sdf_cmd->require_subcommand(1);
  auto* sdf_build = sdf_cmd->add_subcommand("build", "build a graph");
  std::string sdf_env, sdf_out = "graph.json";
  int sdf_n = 16;
  double sdf_branch_p = 0.5, sdf_temp = 0.6;
  double sdf_r_correct = 10.0, sdf_r_incorrect = 0.1;
  std::optional<std::uint64_t> sdf_seed;
  sdf_build->add_option("--env", sdf_env, "environment JSON")->required();
  sdf_build->add_option("--n", sdf_n, "main trajectories");
  sdf_build->add_option("--branch-p", sdf_branch_p, "fork probability");
  sdf_build->add_option("--temperature", sdf_temp, "proposer temperature");
  sdf_build->add_option("--reward-correct", sdf_r_correct, "soft reward");
  sdf_build->add_option("--reward-incorrect", sdf_r_incorrect, "soft reward");
  sdf_build->add_option("--seed", sdf_seed, "seed");
  sdf_build->add_option("--out", sdf_out, "output path");

  // ---- verify -----------------------------------------------------------------
  auto* verify_cmd = app.add_subcommand("verify", "verifier training/checks");
  verify_cmd->require_subcommand(1);
  auto* verify_train = verify_cmd->add_subcommand("train", "train a verifier");
  std::string vt_graph, vt_kind = "rfm", vt_out = "verifier.json";
  double vt_lambda = 1.0, vt_lr = 0.05;
  int vt_epochs = 5000;
  verify_train->add_option("--graph", vt_graph, "SDF graph JSON")->required();
  verify_train->add_option("--kind", vt_kind, "rfm|pointwise|pairwise");
  verify_train->add_option("--lambda", vt_lambda, "leaf-term weight");
  verify_train->add_option("--lr", vt_lr, "learning rate");
  verify_train->add_option("--epochs", vt_epochs, "max epochs");
  verify_train->add_option("--out", vt_out, "output path");
  auto* verify_check = verify_cmd->add_subcommand(
      "check", "conservation residuals and bound violations");
  std::string vc_graph, vc_verifier, vc_oracle;
  bool vc_strict = false;
  verify_check->add_option("--graph", vc_graph, "SDF graph JSON")->required();
  verify_check->add_option("--verifier", vc_verifier, "verifier JSON")
      ->required();
  verify_check->add_option("--oracle", vc_oracle, "environment JSON");
  verify_check->add_flag("--check", vc_strict,
                         "exit 4 when violations are found");

  // ---- search -----------------------------------------------------------------
  auto* search_cmd = app.add_subcommand("search", "inference-time search");
  search_cmd->require_subcommand(1);
  auto* search_bon = search_cmd->add_subcommand("bon", "Best-of-N");
  std::string sb_env, sb_verifier, sb_graph, sb_out = "results.csv";
  int sb_n = 16;
  double sb_temp = 0.6;
  std::optional<std::uint64_t> sb_seed;
  search_bon->add_option("--env", sb_env, "environment JSON")->required();
  search_bon->add_option("--verifier", sb_verifier, "verifier JSON")
      ->required();
  search_bon->add_option("--graph", sb_graph, "support graph JSON")
      ->required();
  search_bon->add_option("--n", sb_n, "sample count");
  search_bon->add_option("--temperature", sb_temp, "proposer temperature");
  search_bon->add_option("--seed", sb_seed, "seed");
  search_bon->add_option("--out", sb_out, "output CSV");
  auto* search_beam = search_cmd->add_subcommand("beam", "flow-guided beam");
  std::string be_env, be_flow, be_graph;
  int be_k = 4, be_b = 2;
  double be_temp = 0.6;
  std::optional<std::uint64_t> be_seed;
  search_beam->add_option("--env", be_env, "environment JSON")->required();
  search_beam->add_option("--flow", be_flow, "flow verifier JSON")
      ->required();
  search_beam->add_option("--graph", be_graph, "support graph JSON")
      ->required();
  search_beam->add_option("--k", be_k, "proposal width");
  search_beam->add_option("--b", be_b, "beam width");
  search_beam->add_option("--temperature", be_temp, "proposer temperature");
  search_beam->add_option("--seed", be_seed, "seed");

  // ---- report -----------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "aggregate evaluation");
  std::string rp_in, rp_subsets, rp_base, rp_out = "report.md",
              rp_csv = "report.csv";
  report_cmd->add_option("--in", rp_in, "results CSV")->required();
  report_cmd->add_option("--subsets", rp_subsets, "subsets JSON");
  report_cmd->add_option("--base", rp_base, "base samples CSV");
  report_cmd->add_option("--out", rp_out, "markdown output");
  report_cmd->add_option("--csv", rp_csv, "CSV output");

  // ---- pipeline ----------------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "full experiment");
  std::string pc_config, pc_out_dir, pc_seeds;
  bool pc_check = false;
  pipe_cmd->add_option("--config", pc_config, "experiment config JSON");
  pipe_cmd->add_option("--out-dir", pc_out_dir, "output directory override");
  pipe_cmd->add_option("--seeds", pc_seeds, "seed range override");
  pipe_cmd->add_flag("--check", pc_check,
                     "re-run and verify manifest determinism (exit 4 on "
                     "mismatch)");

  // ---- plot ----------------------------------------------------------------
  auto* plot_cmd = app.add_subcommand("plot", "emit SVG charts for a run");
  std::string pl_dir;
  plot_cmd->add_option("--dir", pl_dir, "pipeline output directory")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (env_gen->parsed()) {
      EnvConfig config = env_config_path.empty()
                             ? EnvConfig{}
                             : env_config_from_file(env_config_path);
      config.seed = resolve_seed(seed_flag, config.seed);
      TraceSpace env = generate_env(config);
      save_env(env, env_out);
      std::cout << "wrote " << env_out << " (" << env.nodes.size()
                << " nodes, id " << env.id << ")\n";
      return kExitOk;
    }

    if (ext_run->parsed()) {
      SparseUpdateConfig cfg = ext_config_path.empty()
                                   ? SparseUpdateConfig{}
                                   : extinction_config_from_file(
                                         ext_config_path);
      std::vector<TraceSpace> envs;
      for (const std::string& path : expand_glob(ext_envs)) {
        envs.push_back(load_env(path));
      }
      if (envs.empty()) throw ConfigError("no environments matched " + ext_envs);
      std::vector<std::uint64_t> seeds = parse_seeds(ext_seeds);
      if (seeds.empty()) throw ConfigError("no seeds given");
      std::ostringstream merged;
      bool first = true;
      for (std::uint64_t seed : seeds) {
        ExperimentLog log = run_extinction(envs, cfg, seed);
        std::string csv = extinction_log_to_csv(log);
        if (!first) csv = csv.substr(csv.find('\n') + 1);
        merged << csv;
        first = false;
        CategoryDeltas d = final_delta_means(log);
        std::cout << "seed " << seed << ": mode " << d.mode << " rare "
                  << d.rare << " endangered " << d.endangered << "\n";
      }
      write_file(ext_out, merged.str());
      std::cout << "wrote " << ext_out << "\n";
      return kExitOk;
    }

    if (ext_plot->parsed()) {
      write_file(plot_out, extinction_csv_to_svg(read_file(plot_in)));
      std::cout << "wrote " << plot_out << "\n";
      return kExitOk;
    }

    if (sdf_build->parsed()) {
      TraceSpace env = load_env(sdf_env);
      Rng rng = Rng::stream(resolve_seed(sdf_seed), "sdf-cli");
      SdfGraph g = build_sdf(env, sdf_n, sdf_branch_p, sdf_temp, rng);
      g = assign_rewards(std::move(g), env,
                         {sdf_r_correct, sdf_r_incorrect});
      save_graph(g, sdf_out);
      GraphStats stats = graph_stats(g);
      std::cout << "wrote " << sdf_out << " (" << stats.n_nodes << " nodes, "
                << stats.rollout_count << " rollouts, " << stats.n_forks
                << " forks)\n";
      return kExitOk;
    }

    if (verify_train->parsed()) {
      SdfGraph g = load_graph(vt_graph);
      Verifier v;
      Verifier::Kind kind = verifier_kind_from_name(vt_kind);
      if (kind == Verifier::Kind::Rfm) {
        TrainHyper hyper;
        hyper.lambda = vt_lambda;
        hyper.lr = vt_lr;
        hyper.epochs = vt_epochs;
        FlowTable table = train_flow(g, hyper);
        v = to_verifier(table, vt_graph);
        std::cout << "final loss " << table.final_loss << " after "
                  << table.epochs_run << " epochs\n";
      } else if (kind == Verifier::Kind::Pointwise) {
        v = to_verifier(train_pointwise(g), vt_graph);
      } else {
        PairHyper hyper;
        hyper.lr = vt_lr > 0 ? vt_lr : PairHyper{}.lr;
        hyper.epochs = vt_epochs;
        PairScoreTable table = train_pairwise(g, hyper);
        v = to_verifier(table, vt_graph);
        if (table.empty_flagged) {
          std::cout << "no valid pairs; table flagged empty\n";
        } else {
          std::cout << "pairs " << table.n_pairs << ", final loss "
                    << table.final_loss << "\n";
        }
      }
      save_verifier(v, vt_out);
      std::cout << "wrote " << vt_out << "\n";
      return kExitOk;
    }

    if (verify_check->parsed()) {
      SdfGraph g = load_graph(vc_graph);
      Verifier v = load_verifier(vc_verifier);
      if (v.kind != Verifier::Kind::Rfm) {
        throw ConfigError("verify check applies to rfm verifiers");
      }
      if (v.values.size() != g.nodes.size()) {
        throw ConfigError("verifier does not match graph");
      }
      double max_residual = 0.0;
      for (NodeId n : g.internal_nodes()) {
        std::vector<double> kids;
        for (NodeId c : g.nodes[n].children) kids.push_back(v.values[c]);
        max_residual = std::max(
            max_residual, std::abs(v.values[n] - log_sum_exp(kids)));
      }
      std::cout << "max conservation residual |log F - log sum F(children)|: "
                << max_residual << "\n";
      std::size_t violations = 0;
      if (!vc_oracle.empty()) {
        TraceSpace env = load_env(vc_oracle);
        SoftRewardScheme scheme = g.scheme.value_or(SoftRewardScheme{});
        std::vector<double> oracle = oracle_flow_env(env, scheme);
        for (NodeId n = 0; n < g.nodes.size(); ++n) {
          double f = std::exp(v.values[n]);
          double bound = oracle[g.nodes[n].state] * (1.0 + 1e-3);
          if (f > bound) ++violations;
        }
        std::cout << "lower-bound violations (F > F* * (1+1e-3)): "
                  << violations << " of " << g.nodes.size() << " nodes\n";
      }
      bool bad = violations > 0 || max_residual > 1e-4;
      if (vc_strict && bad) return kExitCheck;
      return kExitOk;
    }

    if (search_bon->parsed()) {
      TraceSpace env = load_env(sb_env);
      SdfGraph g = load_graph(sb_graph);
      Verifier v = load_verifier(sb_verifier);
      SearchConfig cfg;
      cfg.n_samples = sb_n;
      cfg.temperature = sb_temp;
      cfg.seed = resolve_seed(sb_seed);
      Rng rng = Rng::stream(cfg.seed, "bon-cli");
      BonOutcome out = best_of_n(env, v, g, cfg, rng);
      std::ostringstream csv;
      csv << "env_id,seed,method,n,selected_trace,correct,score\n";
      csv << env.id << ',' << cfg.seed << ',' << verifier_kind_name(v.kind)
          << ',' << sb_n << ',';
      if (out.selection_error) {
        csv << "-1,0,\n";
      } else {
        csv << out.samples[out.selected].trace_id << ','
            << (out.correct ? 1 : 0) << ','
            << out.scores[out.selected].value_or(0.0) << "\n";
      }
      write_file(sb_out, csv.str());
      if (out.selection_error) {
        std::cout << "selection error: all samples out of support\n";
      } else {
        std::cout << "selected trace " << out.samples[out.selected].trace_id
                  << " (" << (out.correct ? "correct" : "incorrect") << ")\n";
      }
      std::cout << "wrote " << sb_out << "\n";
      return kExitOk;
    }

    if (search_beam->parsed()) {
      TraceSpace env = load_env(be_env);
      SdfGraph g = load_graph(be_graph);
      Verifier v = load_verifier(be_flow);
      if (v.kind != Verifier::Kind::Rfm) {
        throw ConfigError("search beam requires an rfm (flow) verifier");
      }
      SearchConfig cfg;
      cfg.proposal_width = be_k;
      cfg.beam_width = be_b;
      cfg.temperature = be_temp;
      cfg.seed = resolve_seed(be_seed);
      Rng rng = Rng::stream(cfg.seed, "beam-cli");
      BeamOutcome out = beam_search(env, g, v.values, cfg, rng);
      if (out.search_error) {
        std::cout << "search error: no rankable candidates\n";
        return kExitStage;
      }
      std::cout << "selected trace " << out.selected.trace_id << " ("
                << (out.selected.correct ? "correct" : "incorrect") << ")\n";
      return kExitOk;
    }

    if (report_cmd->parsed()) {
      std::vector<EvalRecord> records = records_from_csv(read_file(rp_in));
      SampleMap base;
      if (!rp_base.empty()) {
        std::istringstream in(read_file(rp_base));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          std::istringstream row(line);
          std::string env, n, outcomes;
          std::getline(row, env, ',');
          std::getline(row, n, ',');
          std::getline(row, outcomes, ',');
          std::vector<bool> v;
          for (char c : outcomes) v.push_back(c == '1');
          base[env] = v;
        }
      }
      std::map<std::string, std::set<std::string>> subsets;
      if (!rp_subsets.empty()) {
        nlohmann::json js = nlohmann::json::parse(read_file(rp_subsets));
        for (auto it = js.begin(); it != js.end(); ++it) {
          std::set<std::string> envs;
          for (const auto& e : it.value()) {
            envs.insert(e.get<std::string>());
          }
          subsets[it.key()] = envs;
        }
      }
      Report report = build_report(records, base, subsets);
      write_file(rp_out, report_to_markdown(report));
      write_file(rp_csv, report_to_csv(report));
      std::cout << "wrote " << rp_out << " and " << rp_csv << "\n";
      return kExitOk;
    }

    if (pipe_cmd->parsed()) {
      ExperimentConfig config =
          pc_config.empty() ? ExperimentConfig{} : load_config(pc_config);
      if (!pc_out_dir.empty()) config.output_dir = pc_out_dir;
      if (!pc_seeds.empty()) config.seeds = parse_seeds(pc_seeds);
      Manifest manifest = run_pipeline(config);
      std::cout << "pipeline complete: " << manifest.stages.size()
                << " stages, manifest at " << config.output_dir
                << "/manifest.json\n";
      if (pc_check) {
        ExperimentConfig shadow = config;
        shadow.output_dir = config.output_dir + "-check";
        Manifest again = run_pipeline(shadow);
        bool same = manifest.stages.size() == again.stages.size();
        for (std::size_t i = 0; same && i < manifest.stages.size(); ++i) {
          const auto& a = manifest.stages[i];
          const auto& b = again.stages[i];
          same = a.name == b.name && a.artifacts.size() == b.artifacts.size();
          for (std::size_t j = 0; same && j < a.artifacts.size(); ++j) {
            same = a.artifacts[j].path == b.artifacts[j].path &&
                   a.artifacts[j].hash == b.artifacts[j].hash;
          }
        }
        std::cout << "determinism check: " << (same ? "ok" : "MISMATCH")
                  << "\n";
        if (!same) return kExitCheck;
      }
      return kExitOk;
    }

    if (plot_cmd->parsed()) {
      for (const std::string& path : emit_plots(pl_dir)) {
        std::cout << "wrote " << path << "\n";
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
