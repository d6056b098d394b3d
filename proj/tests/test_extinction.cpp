#include <doctest.h>

#include <flowsqueeze/extinction.hpp>

#include <cmath>

using namespace flowsqueeze;

namespace {

/// Hand-built policy over abstract trace ids with the given probabilities.
PolicyTable make_policy(const std::vector<double>& probs) {
  PolicyTable table;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    table.trace_ids.push_back(static_cast<NodeId>(i));
    table.logits.push_back(std::log(probs[i]));
  }
  return table;
}

TraceSpace flat_env(int n_leaves, const std::vector<NodeId>& correct) {
  // depth-1 star with uniform edges; ids: 0 root, 1..n leaves
  TraceSpace env;
  env.depth = 1;
  env.id = "flat";
  env.nodes.resize(n_leaves + 1);
  double lp = -std::log(static_cast<double>(n_leaves));
  for (int i = 1; i <= n_leaves; ++i) {
    env.nodes[0].children.push_back({static_cast<NodeId>(i), lp});
    env.nodes[i].parent = 0;
    env.nodes[i].terminal_correct = 0;
  }
  for (NodeId c : correct) env.nodes[c].terminal_correct = 1;
  return env;
}

}  // namespace

TEST_CASE("alpha: zero rewards give zero shift") {
  PolicyTable table = make_policy({0.5, 0.5});
  std::map<NodeId, double> rewards{{0, 0.0}, {1, 0.0}};
  CHECK(alpha(table, {0, 1}, rewards, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("alpha: single trace, pi=0.5, R/beta=ln2 -> 0.5") {
  PolicyTable table = make_policy({0.5, 0.5});
  std::map<NodeId, double> rewards{{0, std::log(2.0)}};
  CHECK(alpha(table, {0}, rewards, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("alpha: additive over the sampled set") {
  PolicyTable table = make_policy({0.25, 0.25, 0.25, 0.25});
  std::map<NodeId, double> rewards{{0, std::log(2.0)}, {1, std::log(2.0)}};
  CHECK(alpha(table, {0, 1}, rewards, 1.0) ==
        doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("alpha: strictly positive with any positive sampled reward") {
  PolicyTable table = make_policy({0.1, 0.9});
  std::map<NodeId, double> rewards{{0, 0.3}};
  CHECK(alpha(table, {0}, rewards, 0.7) > 0.0);
}

TEST_CASE("alpha: unknown trace id") {
  PolicyTable table = make_policy({0.5, 0.5});
  std::map<NodeId, double> rewards{{9, 1.0}};
  CHECK_THROWS_AS(alpha(table, {9}, rewards, 1.0), LookupError);
}

TEST_CASE("sparse_update: empty sampled set leaves the policy unchanged") {
  PolicyTable table = make_policy({0.3, 0.7});
  PolicyTable next = sparse_update(table, {}, {}, 1.0);
  CHECK(next.logits == table.logits);
  CHECK(next.iteration == table.iteration + 1);
}

TEST_CASE("sparse_update: two equal traces, sample one at R/beta=ln2") {
  PolicyTable table = make_policy({0.5, 0.5});
  std::map<NodeId, double> rewards{{0, std::log(2.0)}};
  PolicyTable next = sparse_update(table, {0}, rewards, 1.0);
  auto lp = next.log_probs();
  // unnormalized weights go (1, 1) -> (2, 1)
  CHECK(std::exp(lp[1]) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(std::exp(lp[0]) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("Proposition 1: closed form equals the iterative update") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 2 + rng.next_index(64);
    std::vector<double> logits(n);
    for (double& l : logits) l = 2.0 * rng.next_gaussian();
    PolicyTable table;
    for (std::size_t i = 0; i < n; ++i) {
      table.trace_ids.push_back(static_cast<NodeId>(i));
      table.logits.push_back(logits[i]);
    }
    double beta = 0.05 + rng.next_double() * 2.0;
    std::set<NodeId> sampled;
    std::map<NodeId, double> rewards;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.next_double() < 0.3) {
        sampled.insert(static_cast<NodeId>(i));
        rewards[static_cast<NodeId>(i)] = rng.next_double() * 2.0;
      }
    }
    double a = alpha(table, sampled, rewards, beta);
    PolicyTable next = sparse_update(table, sampled, rewards, beta);
    auto before = table.log_probs();
    auto after = next.log_probs();
    for (std::size_t i = 0; i < n; ++i) {
      if (sampled.count(static_cast<NodeId>(i))) continue;
      double iterative = std::exp(after[i]);
      double closed = closed_form_unsampled(std::exp(before[i]), a);
      CHECK(std::abs(iterative - closed) < 1e-12);
    }
    // partition identity
    double z_ratio = std::exp(next.log_partition() - table.log_partition());
    CHECK(std::abs(z_ratio - (1.0 + a)) < 1e-10);
  }
}

TEST_CASE("closed_form_unsampled: fixed points and iterates") {
  CHECK(closed_form_unsampled(0.1, 0.0) == doctest::Approx(0.1));
  CHECK(closed_form_unsampled(0.5, 0.5) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // iterate three times at alpha = 0.5 from 0.1: 0.1 * (2/3)^3
  double p = 0.1;
  for (int i = 0; i < 3; ++i) p = closed_form_unsampled(p, 0.5);
  CHECK(p == doctest::Approx(0.1 * std::pow(2.0 / 3.0, 3)).epsilon(1e-12));
  CHECK(p == doctest::Approx(0.029630).epsilon(1e-4));
}

TEST_CASE("closed form tracked through a controlled iterative system") {
  // three traces: A sampled, B tracked, C ballast; per step the reward is
  // chosen so alpha stays exactly 0.5, and B must follow 0.1 * (2/3)^k
  PolicyTable table = make_policy({0.5, 0.1, 0.4});
  double beta = 1.0;
  for (int step = 1; step <= 3; ++step) {
    auto lp = table.log_probs();
    double pi_a = std::exp(lp[0]);
    double r = beta * std::log(1.0 + 0.5 / pi_a);
    std::map<NodeId, double> rewards{{0, r}};
    CHECK(alpha(table, {0}, rewards, beta) ==
          doctest::Approx(0.5).epsilon(1e-12));
    table = sparse_update(table, {0}, rewards, beta);
    double pi_b = std::exp(table.log_probs()[1]);
    CHECK(pi_b ==
          doctest::Approx(0.1 * std::pow(2.0 / 3.0, step)).epsilon(1e-10));
  }
}

TEST_CASE("rel_log_likelihood") {
  CHECK(rel_log_likelihood(1e-3, 1e-4) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rel_log_likelihood(0.42, 0.42) == doctest::Approx(0.0));
  CHECK(rel_log_likelihood(0.3 * 0.2, 0.2) ==
        doctest::Approx(-0.5228787).epsilon(1e-6));
}

TEST_CASE("categorize_traces: degenerate overlap") {
  TraceSpace env = flat_env(4, {1});
  std::vector<TrajectorySample> pool;
  TrajectorySample s;
  s.path = {0, 1};
  s.trace_id = 1;
  s.correct = true;
  pool.push_back(s);
  s.path = {0, 2};
  s.trace_id = 2;
  s.correct = false;
  pool.push_back(s);

  auto cats = categorize_traces(env, pool);
  REQUIRE(cats.count(1) == 1);
  CHECK(cats.at(1).mode);
  CHECK(cats.at(1).rare);
  CHECK(cats.at(1).endangered);
  CHECK(cats.count(2) == 0);
}

TEST_CASE("categorize_traces: five distinct correct traces") {
  TraceSpace env = flat_env(8, {1, 2, 3, 4, 5});
  // give the leaves distinct likelihoods
  double lps[8] = {-0.5, -1.0, -1.5, -2.0, -2.5, -3.0, -3.5, -4.0};
  for (int i = 0; i < 8; ++i) env.nodes[0].children[i].log_prob = lps[i];

  std::vector<TrajectorySample> pool;
  for (NodeId t = 1; t <= 5; ++t) {
    TrajectorySample s;
    s.path = {0, t};
    s.trace_id = t;
    s.correct = true;
    pool.push_back(s);
  }
  auto cats = categorize_traces(env, pool);
  int n_mode = 0, n_rare = 0, n_end = 0;
  for (const auto& [trace, c] : cats) {
    n_mode += c.mode;
    n_rare += c.rare;
    n_end += c.endangered;
  }
  CHECK(n_mode == 2);
  CHECK(n_rare == 2);
  CHECK(n_end == 0);
  CHECK(cats.at(1).mode);
  CHECK(cats.at(2).mode);
  CHECK(cats.at(4).rare);
  CHECK(cats.at(5).rare);
}

TEST_CASE("categorize_traces: zero correct traces is an error") {
  TraceSpace env = flat_env(4, {1});
  std::vector<TrajectorySample> pool;
  TrajectorySample s;
  s.path = {0, 2};
  s.trace_id = 2;
  s.correct = false;
  pool.push_back(s);
  CHECK_THROWS_AS(categorize_traces(env, pool), DataError);
}

TEST_CASE("run_extinction: zero rewards freeze the policy") {
  EnvConfig config;
  config.depth = 4;
  config.branching = 2;
  config.n_traces_correct = 4;
  config.tail_mass = 0.4;
  config.seed = 3;
  std::vector<TraceSpace> envs{generate_env(config)};
  SparseUpdateConfig cfg;
  cfg.reward_correct = 0.0;
  cfg.reward_incorrect = 0.0;
  cfg.n_steps = 20;
  ExperimentLog log = run_extinction(envs, cfg, 0);
  REQUIRE(log.runs.size() == 1);
  for (const auto& rec : log.runs[0].steps) {
    for (std::size_t i = 0; i < rec.tracked_log_pi.size(); ++i) {
      CHECK(std::abs(rec.tracked_log_pi[i] -
                     log.runs[0].tracked_log_pi0[i]) < 1e-12);
    }
    CHECK(rec.alpha == doctest::Approx(0.0));
  }
}

TEST_CASE("forced mode sampling gives strictly increasing delta") {
  // direct simulation: the mode trace is the sampled set at every step
  PolicyTable table = make_policy({0.05, 0.2, 0.75});
  std::map<NodeId, double> rewards{{1, 1.0}};
  double beta = 20.0;
  double prev = -1e300;
  for (int step = 0; step < 50; ++step) {
    table = sparse_update(table, {1}, rewards, beta);
    double lp = table.log_probs()[1];
    CHECK(lp > prev);
    prev = lp;
  }
}

TEST_CASE("run_extinction: invariants along the trajectory") {
  EnvConfig config;
  config.depth = 5;
  config.branching = 2;
  config.n_traces_correct = 6;
  config.tail_mass = 0.4;
  config.seed = 8;
  std::vector<TraceSpace> envs{generate_env(config)};
  SparseUpdateConfig cfg;
  cfg.n_steps = 60;
  ExperimentLog log = run_extinction(envs, cfg, 1);
  REQUIRE(log.runs.size() == 1);
  const auto& run = log.runs[0];
  CHECK(run.max_closed_form_err < 1e-12);
  CHECK(run.max_partition_err < 1e-10);
  for (const auto& rec : run.steps) {
    CHECK(std::abs(rec.z_ratio - (1.0 + rec.alpha)) < 1e-10);
  }
}

TEST_CASE("monotone squeeze: never-sampled trace decays when alpha > 0") {
  PolicyTable table = make_policy({0.5, 0.2, 0.3});
  std::map<NodeId, double> rewards{{0, 0.5}};
  double prev = std::exp(table.log_probs()[1]);
  for (int step = 0; step < 30; ++step) {
    CHECK(alpha(table, {0}, rewards, 1.0) > 0.0);
    table = sparse_update(table, {0}, rewards, 1.0);
    double cur = std::exp(table.log_probs()[1]);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("conservation after every update") {
  Rng rng(5);
  PolicyTable table = make_policy({0.1, 0.2, 0.3, 0.25, 0.15});
  for (int step = 0; step < 40; ++step) {
    std::set<NodeId> sampled{static_cast<NodeId>(rng.next_index(5))};
    std::map<NodeId, double> rewards;
    for (NodeId t : sampled) rewards[t] = rng.next_double();
    table = sparse_update(table, sampled, rewards, 0.5);
    double total = 0.0;
    for (double lp : table.log_probs()) total += std::exp(lp);
    CHECK(std::abs(total - 1.0) < 1e-10);
  }
}

TEST_CASE("default suite reproduces the sign pattern (reduced run)") {
  // 5 seeds here; the acceptance suite runs the full 20-seed protocol
  SparseUpdateConfig cfg;
  double mode_sum = 0, rare_sum = 0, end_sum = 0;
  std::size_t nm = 0, nr = 0, ne = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<TraceSpace> envs;
    for (const EnvConfig& c : default_extinction_suite(seed)) {
      envs.push_back(generate_env(c));
    }
    ExperimentLog log = run_extinction(envs, cfg, seed);
    CategoryDeltas d = final_delta_means(log);
    mode_sum += d.mode * static_cast<double>(d.n_mode);
    rare_sum += d.rare * static_cast<double>(d.n_rare);
    end_sum += d.endangered * static_cast<double>(d.n_endangered);
    nm += d.n_mode;
    nr += d.n_rare;
    ne += d.n_endangered;
  }
  REQUIRE(nm > 0);
  REQUIRE(nr > 0);
  REQUIRE(ne > 0);
  double mode = mode_sum / static_cast<double>(nm);
  double rare = rare_sum / static_cast<double>(nr);
  double endangered = end_sum / static_cast<double>(ne);
  CHECK(mode > 0.0);
  CHECK(rare < 0.0);
  CHECK(endangered < 0.0);
  CHECK(mode > rare);
}

TEST_CASE("extinction log CSV has the documented columns") {
  EnvConfig config;
  config.depth = 3;
  config.branching = 2;
  config.n_traces_correct = 2;
  config.tail_mass = 0.4;
  config.seed = 12;
  std::vector<TraceSpace> envs{generate_env(config)};
  SparseUpdateConfig cfg;
  cfg.n_steps = 3;
  std::string csv = extinction_log_to_csv(run_extinction(envs, cfg, 0));
  CHECK(csv.rfind("step,env_id,seed,trace_id,category,pi,delta_log10,alpha,"
                  "z_ratio\n",
                  0) == 0);
  CHECK(csv.find("Mode") != std::string::npos);
}
