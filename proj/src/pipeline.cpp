#include <flowsqueeze/pipeline.hpp>

#include <flowsqueeze/svg.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace flowsqueeze {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_file: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_file: cannot open " + path);
  f << content;
}

std::string hash_file(const std::string& path) {
  std::uint64_t h = fnv1a64(read_file(path));
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

namespace {

nlohmann::json env_config_json(const EnvConfig& c) {
  return {{"depth", c.depth},
          {"branching", c.branching},
          {"n_traces_correct", c.n_traces_correct},
          {"tail_mass", c.tail_mass},
          {"logit_std", c.logit_std},
          {"seed", c.seed}};
}

EnvConfig env_config_from(const nlohmann::json& j, const EnvConfig& dflt) {
  EnvConfig c = dflt;
  c.depth = j.value("depth", c.depth);
  c.branching = j.value("branching", c.branching);
  c.n_traces_correct = j.value("n_traces_correct", c.n_traces_correct);
  c.tail_mass = j.value("tail_mass", c.tail_mass);
  c.logit_std = j.value("logit_std", c.logit_std);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (j.value("version", 0) != 1) {
    throw ConfigError("config: unsupported or missing version");
  }
  ExperimentConfig c;
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("seeds")) {
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  }
  if (c.seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  c.suite_seed = j.value("suite_seed", c.suite_seed);
  if (j.contains("env_groups")) {
    for (const auto& jg : j.at("env_groups")) {
      EnvGroup g;
      g.count = jg.value("count", 1);
      g.config = env_config_from(jg, EnvConfig{});
      c.env_groups.push_back(g);
    }
  }
  if (j.contains("extinction")) {
    const auto& je = j.at("extinction");
    c.extinction.beta = je.value("beta", c.extinction.beta);
    c.extinction.temperature =
        je.value("temperature", c.extinction.temperature);
    c.extinction.n_rollouts = je.value("n_rollouts", c.extinction.n_rollouts);
    c.extinction.n_steps = je.value("n_steps", c.extinction.n_steps);
    c.extinction.reward_correct =
        je.value("reward_correct", c.extinction.reward_correct);
    c.extinction.reward_incorrect =
        je.value("reward_incorrect", c.extinction.reward_incorrect);
    c.extinction.n_samples_per_step =
        je.value("n_samples_per_step", c.extinction.n_samples_per_step);
    c.extinction.pool_temperature =
        je.value("pool_temperature", c.extinction.pool_temperature);
  }
  if (j.contains("sdf")) {
    const auto& js = j.at("sdf");
    c.sdf.n_main = js.value("n_main", c.sdf.n_main);
    c.sdf.branch_p = js.value("branch_p", c.sdf.branch_p);
    c.sdf.temperature = js.value("temperature", c.sdf.temperature);
  }
  if (j.contains("verifier")) {
    const auto& jv = j.at("verifier");
    c.verifier.lr = jv.value("lr", c.verifier.lr);
    c.verifier.epochs = jv.value("epochs", c.verifier.epochs);
    c.verifier.lambda = jv.value("lambda", c.verifier.lambda);
  }
  if (j.contains("pairwise")) {
    const auto& jp = j.at("pairwise");
    c.pairwise.lr = jp.value("lr", c.pairwise.lr);
    c.pairwise.epochs = jp.value("epochs", c.pairwise.epochs);
  }
  if (j.contains("search")) {
    const auto& js = j.at("search");
    c.search.n_samples = js.value("n_samples", c.search.n_samples);
    c.search.proposal_width =
        js.value("proposal_width", c.search.proposal_width);
    c.search.beam_width = js.value("beam_width", c.search.beam_width);
    c.search.temperature = js.value("temperature", c.search.temperature);
  }
  if (j.contains("reward_scheme")) {
    c.reward_scheme.correct =
        j.at("reward_scheme").value("correct", c.reward_scheme.correct);
    c.reward_scheme.incorrect =
        j.at("reward_scheme").value("incorrect", c.reward_scheme.incorrect);
  }
  c.n_base_samples = j.value("n_base_samples", c.n_base_samples);
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : c.env_groups) {
    nlohmann::json jg = env_config_json(g.config);
    jg["count"] = g.count;
    groups.push_back(jg);
  }
  nlohmann::json j{
      {"version", 1},
      {"output_dir", c.output_dir},
      {"seeds", c.seeds},
      {"suite_seed", c.suite_seed},
      {"env_groups", groups},
      {"extinction",
       {{"beta", c.extinction.beta},
        {"temperature", c.extinction.temperature},
        {"n_rollouts", c.extinction.n_rollouts},
        {"n_steps", c.extinction.n_steps},
        {"reward_correct", c.extinction.reward_correct},
        {"reward_incorrect", c.extinction.reward_incorrect},
        {"n_samples_per_step", c.extinction.n_samples_per_step},
        {"pool_temperature", c.extinction.pool_temperature}}},
      {"sdf",
       {{"n_main", c.sdf.n_main},
        {"branch_p", c.sdf.branch_p},
        {"temperature", c.sdf.temperature}}},
      {"verifier",
       {{"lr", c.verifier.lr},
        {"epochs", c.verifier.epochs},
        {"lambda", c.verifier.lambda}}},
      {"pairwise", {{"lr", c.pairwise.lr}, {"epochs", c.pairwise.epochs}}},
      {"search",
       {{"n_samples", c.search.n_samples},
        {"proposal_width", c.search.proposal_width},
        {"beam_width", c.search.beam_width},
        {"temperature", c.search.temperature}}},
      {"reward_scheme",
       {{"correct", c.reward_scheme.correct},
        {"incorrect", c.reward_scheme.incorrect}}},
      {"n_base_samples", c.n_base_samples}};
  return j.dump(2);
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_json(read_file(path));
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : m.stages) {
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& a : s.artifacts) {
      arts.push_back({{"path", a.path}, {"hash", a.hash}});
    }
    stages.push_back({{"name", s.name}, {"artifacts", arts}});
  }
  nlohmann::json j{{"version", m.version},
                   {"config_hash", m.config_hash},
                   {"stages", stages},
                   {"complete", m.complete}};
  return j.dump(2);
}

Manifest manifest_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Manifest m;
  m.version = j.value("version", 1);
  m.config_hash = j.value("config_hash", "");
  m.complete = j.value("complete", false);
  for (const auto& js : j.value("stages", nlohmann::json::array())) {
    StageEntry s;
    s.name = js.at("name").get<std::string>();
    for (const auto& ja : js.value("artifacts", nlohmann::json::array())) {
      s.artifacts.push_back({ja.at("path").get<std::string>(),
                             ja.at("hash").get<std::string>()});
    }
    m.stages.push_back(std::move(s));
  }
  return m;
}

namespace {

std::string unit_id(const std::string& env_id, std::uint64_t seed) {
  return env_id + "#" + std::to_string(seed);
}

std::string bits(const std::vector<bool>& v) {
  std::string out;
  for (bool b : v) out.push_back(b ? '1' : '0');
  return out;
}

struct StageWriter {
  const std::string& out_dir;
  Manifest& manifest;

  StageEntry* begin(const std::string& name) {
    manifest.stages.push_back({name, {}});
    return &manifest.stages.back();
  }

  void emit(StageEntry* stage, const std::string& rel_path,
            const std::string& content) {
    std::string full = out_dir + "/" + rel_path;
    write_file(full, content);
    stage->artifacts.push_back({rel_path, hash_file(full)});
  }
};

}  // namespace

Manifest run_pipeline(const ExperimentConfig& config) {
  fs::create_directories(config.output_dir);

  Manifest manifest;
  {
    std::ostringstream h;
    h << std::hex << fnv1a64(config_to_json(config));
    manifest.config_hash = h.str();
  }
  StageWriter writer{config.output_dir, manifest};

  // ---- stage 1: environments --------------------------------------------
  StageEntry* stage = writer.begin("env");
  std::vector<EnvConfig> env_configs;
  if (config.env_groups.empty()) {
    env_configs = default_extinction_suite(config.suite_seed);
  } else {
    int ordinal = 0;
    for (const auto& g : config.env_groups) {
      for (int i = 0; i < g.count; ++i) {
        EnvConfig c = g.config;
        c.seed = c.seed * 1000 + static_cast<std::uint64_t>(ordinal++);
        env_configs.push_back(c);
      }
    }
  }
  std::vector<TraceSpace> envs;
  for (const auto& ec : env_configs) {
    envs.push_back(generate_env(ec));
    writer.emit(stage, "envs/" + envs.back().id + ".json",
                env_to_json(envs.back()));
  }

  // ---- stage 2: extinction dynamics --------------------------------------
  stage = writer.begin("extinction");
  std::ostringstream merged_csv;
  std::map<std::string, std::vector<double>> final_logits;  // unit -> logits
  bool first_log = true;
  std::vector<ExperimentLog> logs;
  for (std::uint64_t seed : config.seeds) {
    ExperimentLog log = run_extinction(envs, config.extinction, seed);
    std::string csv = extinction_log_to_csv(log);
    if (!first_log) {
      csv = csv.substr(csv.find('\n') + 1);  // drop repeated header
    }
    merged_csv << csv;
    first_log = false;
    for (const auto& run : log.runs) {
      final_logits[unit_id(run.env_id, seed)] = run.final_logits;
    }
    logs.push_back(std::move(log));
  }
  writer.emit(stage, "extinction/log.csv", merged_csv.str());
  {
    nlohmann::json summary = nlohmann::json::array();
    double mode_sum = 0, rare_sum = 0, end_sum = 0;
    std::size_t nm = 0, nr = 0, ne = 0;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      CategoryDeltas d = final_delta_means(logs[i]);
      summary.push_back({{"seed", config.seeds[i]},
                         {"mode", d.mode},
                         {"rare", d.rare},
                         {"endangered", d.endangered}});
      mode_sum += d.mode * static_cast<double>(d.n_mode);
      rare_sum += d.rare * static_cast<double>(d.n_rare);
      end_sum += d.endangered * static_cast<double>(d.n_endangered);
      nm += d.n_mode;
      nr += d.n_rare;
      ne += d.n_endangered;
    }
    nlohmann::json doc{
        {"per_seed", summary},
        {"overall",
         {{"mode", nm ? mode_sum / static_cast<double>(nm) : 0.0},
          {"rare", nr ? rare_sum / static_cast<double>(nr) : 0.0},
          {"endangered", ne ? end_sum / static_cast<double>(ne) : 0.0}}}};
    writer.emit(stage, "extinction/summary.json", doc.dump(2));
  }

  // ---- stage 3: sparse deep fork graphs ----------------------------------
  stage = writer.begin("sdf");
  std::map<std::string, SdfGraph> graphs;  // unit -> training graph
  for (std::uint64_t seed : config.seeds) {
    for (const auto& env : envs) {
      Rng rng = Rng::stream(seed ^ fnv1a64(env.id), "sdf-train");
      SdfGraph g = build_sdf(env, config.sdf.n_main, config.sdf.branch_p,
                             config.sdf.temperature, rng);
      g = assign_rewards(std::move(g), env, config.reward_scheme);
      std::string unit = unit_id(env.id, seed);
      writer.emit(stage, "sdf/" + unit + ".json", graph_to_json(g));
      graphs.emplace(unit, std::move(g));
    }
  }

  // ---- stage 4: verifier training -----------------------------------------
  stage = writer.begin("verify");
  std::map<std::string, std::map<std::string, Verifier>> verifiers;
  for (const auto& [unit, graph] : graphs) {
    std::map<std::string, Verifier> vs;
    vs["rfm"] = to_verifier(train_flow(graph, config.verifier), unit);
    vs["pointwise"] = to_verifier(train_pointwise(graph), unit);
    vs["pairwise"] = to_verifier(train_pairwise(graph, config.pairwise), unit);
    for (const auto& [kind, v] : vs) {
      writer.emit(stage, "verifiers/" + kind + "-" + unit + ".json",
                  verifier_to_json(v));
    }
    verifiers.emplace(unit, std::move(vs));
  }

  // ---- stage 5: search / evaluation ---------------------------------------
  stage = writer.begin("search");
  std::vector<EvalRecord> records;
  SampleMap base_samples, extinct_samples;
  std::vector<int> n_grid;
  for (int n = 2; n <= config.search.n_samples; n *= 2) n_grid.push_back(n);
  if (n_grid.empty()) n_grid.push_back(config.search.n_samples);

  for (std::uint64_t seed : config.seeds) {
    for (const auto& env : envs) {
      std::string unit = unit_id(env.id, seed);
      Rng eval_rng = Rng::stream(seed ^ fnv1a64(env.id), "bon-eval");

      // evaluation candidates from the frozen proposer; first n_base also
      // serve as the base outcome vector
      int n_draw = std::max(config.search.n_samples, config.n_base_samples);
      std::vector<TrajectorySample> samples;
      TraceSampler proposer(env, config.search.temperature);
      for (int i = 0; i < n_draw; ++i) samples.push_back(proposer.sample(eval_rng));

      std::vector<bool> base(config.n_base_samples);
      for (int i = 0; i < config.n_base_samples; ++i) {
        base[static_cast<std::size_t>(i)] = samples[i].correct;
      }
      base_samples[unit] = base;

      // post-extinction policy outcomes define the extinction-zone subset;
      // environments excluded from the dynamics keep the base policy
      {
        Rng ext_rng = Rng::stream(seed ^ fnv1a64(env.id), "extinct-eval");
        PolicyTable policy = PolicyTable::from_env(env);
        auto it = final_logits.find(unit);
        if (it != final_logits.end() && !it->second.empty()) {
          policy.logits = it->second;
        }
        std::vector<bool> outcomes(config.n_base_samples);
        for (int i = 0; i < config.n_base_samples; ++i) {
          outcomes[static_cast<std::size_t>(i)] =
              sample_trace(env, policy, config.extinction.pool_temperature,
                           ext_rng)
                  .correct;
        }
        extinct_samples[unit] = outcomes;
      }

      // oracle flow over the full environment for the upper-bound method
      SdfGraph full = make_full_graph(env);
      full = assign_rewards(std::move(full), env, config.reward_scheme);
      std::vector<double> oracle = oracle_flow(full);
      Verifier oracle_v;
      oracle_v.kind = Verifier::Kind::Rfm;
      oracle_v.values.resize(oracle.size());
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        oracle_v.values[i] = std::log(oracle[i]);
      }

      const SdfGraph& train_graph = graphs.at(unit);
      const auto& unit_verifiers = verifiers.at(unit);

      auto select_among = [&](const Verifier& v, const SdfGraph& support,
                              int n) -> std::optional<bool> {
        std::optional<std::size_t> best;
        for (int i = 0; i < n; ++i) {
          auto s = score_trajectory(v, samples[i], support);
          if (!s) continue;
          if (!best) {
            best = i;
            continue;
          }
          auto bs = *score_trajectory(v, samples[*best], support);
          if (*s > bs || (*s == bs && samples[i].trace_id <
                                          samples[*best].trace_id)) {
            best = i;
          }
        }
        if (!best) return std::nullopt;
        return samples[*best].correct;
      };

      for (int n : n_grid) {
        for (const auto& [kind, v] : unit_verifiers) {
          auto sel = select_among(v, train_graph, n);
          records.push_back(
              {unit, kind, n, sel.value_or(false), seed});
        }
        auto sel = select_among(oracle_v, full, n);
        records.push_back({unit, "oracle", n, sel.value_or(false), seed});
      }
      records.push_back({unit, "base", 1, samples[0].correct, seed});
    }
  }
  writer.emit(stage, "search/results.csv", records_to_csv(records));
  {
    std::ostringstream csv;
    csv << "env_id,n,outcomes\n";
    for (const auto& [unit, v] : base_samples) {
      csv << unit << ',' << v.size() << ',' << bits(v) << "\n";
    }
    writer.emit(stage, "search/base_samples.csv", csv.str());
    std::ostringstream ecsv;
    ecsv << "env_id,n,outcomes\n";
    for (const auto& [unit, v] : extinct_samples) {
      ecsv << unit << ',' << v.size() << ',' << bits(v) << "\n";
    }
    writer.emit(stage, "search/extinct_samples.csv", ecsv.str());
  }

  // ---- stage 6: report -----------------------------------------------------
  stage = writer.begin("report");
  std::map<std::string, std::set<std::string>> subsets;
  SubsetSpec rare_spec;
  rare_spec.kind = SubsetSpec::Kind::RareSolution;
  rare_spec.n_base = config.n_base_samples;
  subsets["rare_solution"] = stress_subset(base_samples, rare_spec);
  SubsetSpec ext_spec;
  ext_spec.kind = SubsetSpec::Kind::ExtinctionZone;
  ext_spec.n_base = config.n_base_samples;
  subsets["extinction_zone"] = stress_subset(extinct_samples, ext_spec);
  {
    nlohmann::json js;
    for (const auto& [name, envs_in] : subsets) {
      js[name] = std::vector<std::string>(envs_in.begin(), envs_in.end());
    }
    writer.emit(stage, "report/subsets.json", js.dump(2));
  }
  Report report = build_report(records, base_samples, subsets);
  writer.emit(stage, "report/report.md", report_to_markdown(report));
  writer.emit(stage, "report/report.csv", report_to_csv(report));

  manifest.complete = true;
  write_file(config.output_dir + "/manifest.json",
             manifest_to_json(manifest));
  return manifest;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

std::string extinction_csv_to_svg(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw ArgumentError("extinction plot: empty log");
  }
  auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw SchemaError("extinction plot: missing column " + name);
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  std::size_t c_step = col("step"), c_cat = col("category"),
              c_delta = col("delta_log10");
  std::map<std::string, std::map<int, std::pair<double, std::size_t>>> acc;
  bool any = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    int step = std::stoi(f[c_step]);
    auto& slot = acc[f[c_cat]][step];
    slot.first += std::stod(f[c_delta]);
    slot.second += 1;
    any = true;
  }
  if (!any) throw ArgumentError("extinction plot: log has no rows");
  std::vector<Series> series;
  for (const auto& [cat, per_step] : acc) {
    Series s;
    s.label = cat;
    for (const auto& [step, sum_count] : per_step) {
      s.x.push_back(step);
      s.y.push_back(sum_count.first / static_cast<double>(sum_count.second));
    }
    series.push_back(std::move(s));
  }
  return line_chart_svg(series, "Relative log-likelihood by category", "step",
                        "mean delta log10");
}

std::vector<std::string> emit_plots(const std::string& output_dir) {
  std::vector<std::string> written;

  // fig1b: mean delta-log10 per category vs step
  {
    std::string path = output_dir + "/plots/fig1b.svg";
    write_file(path, extinction_csv_to_svg(
                         read_file(output_dir + "/extinction/log.csv")));
    written.push_back(path);
  }

  // bon + recovery bars from the report csv
  {
    std::string csv = read_file(output_dir + "/report/report.csv");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    if (line != "section,method,n,value") {
      throw SchemaError("emit_plots: unexpected report csv header");
    }
    std::map<std::string, std::map<int, double>> bon;
    std::map<std::string, double> recovery;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv_line(line);
      if (f.size() < 4) throw SchemaError("emit_plots: malformed report row");
      if (f[0] == "bon") {
        bon[f[1]][std::stoi(f[2])] = std::stod(f[3]);
      } else if (f[0] == "subset:extinction_zone") {
        recovery[f[1]] = std::stod(f[3]);
      }
    }
    if (!bon.empty()) {
      std::set<int> ns;
      for (const auto& [m, per_n] : bon) {
        for (const auto& [n, v] : per_n) ns.insert(n);
      }
      std::vector<std::string> methods;
      for (const auto& [m, per_n] : bon) methods.push_back(m);
      std::vector<BarGroup> groups;
      for (int n : ns) {
        BarGroup g;
        g.label = "N=" + std::to_string(n);
        for (const auto& m : methods) {
          auto it = bon.at(m).find(n);
          g.values.push_back(it == bon.at(m).end() ? 0.0 : it->second);
        }
        groups.push_back(std::move(g));
      }
      std::string path = output_dir + "/plots/bon.svg";
      write_file(path, bar_chart_svg(groups, methods, "Best-of-N accuracy",
                                     "accuracy"));
      written.push_back(path);
    }
    if (!recovery.empty()) {
      std::vector<std::string> methods;
      BarGroup g;
      g.label = "extinction zone";
      for (const auto& [m, v] : recovery) {
        methods.push_back(m);
        g.values.push_back(v);
      }
      std::string path = output_dir + "/plots/recovery.svg";
      write_file(path, bar_chart_svg({g}, methods,
                                     "Recovery on the extinction zone",
                                     "accuracy"));
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace flowsqueeze
