#include <doctest.h>

#include <flowsqueeze/trace_space.hpp>

#include <cmath>
#include <map>

using namespace flowsqueeze;

namespace {

/// Depth-1 tree with two leaves at the given (unnormalized) logits.
TraceSpace two_leaf_env(double logit_a, double logit_b, bool a_correct) {
  TraceSpace env;
  env.depth = 1;
  env.id = "hand-2leaf";
  env.nodes.resize(3);
  std::vector<double> z{logit_a, logit_b};
  log_normalize(z);
  env.nodes[0].children = {{1, z[0]}, {2, z[1]}};
  env.nodes[1].parent = 0;
  env.nodes[2].parent = 0;
  env.nodes[1].terminal_correct = a_correct ? 1 : 0;
  env.nodes[2].terminal_correct = a_correct ? 0 : 1;
  return env;
}

}  // namespace

TEST_CASE("generate_env: symmetric two-leaf case") {
  EnvConfig config;
  config.depth = 1;
  config.branching = 2;
  config.n_traces_correct = 1;
  config.tail_mass = 0.5;
  config.seed = 7;
  TraceSpace env = generate_env(config);

  auto traces = enumerate_traces(env);
  REQUIRE(traces.size() == 2);
  CHECK(std::exp(traces[0].log_prob_base) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(std::exp(traces[1].log_prob_base) == doctest::Approx(0.5).epsilon(1e-9));
  int n_correct = traces[0].correct + traces[1].correct;
  CHECK(n_correct == 1);
}

TEST_CASE("generate_env: tail mass is hit by the offset solver") {
  EnvConfig config;
  config.depth = 2;
  config.branching = 2;
  config.n_traces_correct = 1;
  config.tail_mass = 0.0625;
  config.seed = 3;
  TraceSpace env = generate_env(config);

  double mass = 0.0;
  for (const auto& t : enumerate_traces(env)) {
    if (t.correct) mass += std::exp(t.log_prob_base);
  }
  CHECK(mass == doctest::Approx(0.0625).epsilon(0).scale(1).epsilon(1e-6));

  // broader configs too
  for (double tail : {0.02, 0.45}) {
    EnvConfig c;
    c.depth = 6;
    c.branching = 2;
    c.n_traces_correct = 4;
    c.tail_mass = tail;
    c.seed = 11;
    TraceSpace e = generate_env(c);
    double m = 0.0;
    for (const auto& t : enumerate_traces(e)) {
      if (t.correct) m += std::exp(t.log_prob_base);
    }
    CHECK(std::abs(m - tail) < 1e-6);
  }
}

TEST_CASE("generate_env: deterministic given seed") {
  EnvConfig config;
  config.depth = 4;
  config.branching = 3;
  config.n_traces_correct = 5;
  config.tail_mass = 0.2;
  config.seed = 42;
  CHECK(env_to_json(generate_env(config)) == env_to_json(generate_env(config)));
}

TEST_CASE("generate_env: rejects bad configs") {
  EnvConfig config;
  config.depth = 0;
  CHECK_THROWS_AS(generate_env(config), ConfigError);
  config.depth = 2;
  config.branching = 1;
  CHECK_THROWS_AS(generate_env(config), ConfigError);
  config.branching = 2;
  config.tail_mass = 0.0;
  CHECK_THROWS_AS(generate_env(config), ConfigError);
  config.tail_mass = 0.5;
  config.n_traces_correct = 4;  // == total leaves
  CHECK_THROWS_AS(generate_env(config), ConfigError);
}

TEST_CASE("enumerate_traces: equal-logit trees") {
  TraceSpace env = two_leaf_env(0.0, 0.0, true);
  auto traces = enumerate_traces(env);
  REQUIRE(traces.size() == 2);
  for (const auto& t : traces) {
    CHECK(std::exp(t.log_prob_base) == doctest::Approx(0.5));
  }

  // depth-2 binary, equal logits -> four traces at 0.25
  EnvConfig config;
  config.depth = 2;
  config.branching = 2;
  config.n_traces_correct = 1;
  config.tail_mass = 0.25;
  config.logit_std = 0.0;  // all edges equal before the offset
  config.seed = 1;
  TraceSpace e2 = generate_env(config);
  auto t2 = enumerate_traces(e2);
  REQUIRE(t2.size() == 4);
  for (const auto& t : t2) {
    CHECK(std::exp(t.log_prob_base) == doctest::Approx(0.25).epsilon(1e-9));
  }
}

TEST_CASE("enumerate_traces: probabilities sum to one") {
  EnvConfig config;
  config.depth = 6;
  config.branching = 3;
  config.n_traces_correct = 10;
  config.tail_mass = 0.3;
  config.seed = 9;
  TraceSpace env = generate_env(config);
  double total = 0.0;
  for (const auto& t : enumerate_traces(env)) {
    total += std::exp(t.log_prob_base);
  }
  CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("enumerate_traces: leaf cap") {
  EnvConfig config;
  config.depth = 4;
  config.branching = 2;
  config.n_traces_correct = 1;
  config.tail_mass = 0.1;
  config.seed = 1;
  TraceSpace env = generate_env(config);
  CHECK_THROWS_AS(enumerate_traces(env, 8), SizeError);
}

TEST_CASE("edge-softmax trace probability equals flat trace-softmax") {
  EnvConfig config;
  config.depth = 5;
  config.branching = 2;
  config.n_traces_correct = 3;
  config.tail_mass = 0.15;
  config.seed = 21;
  TraceSpace env = generate_env(config);

  // T = 1: per-edge product vs softmax of summed edge logits
  PolicyTable table = PolicyTable::from_env(env);
  auto log_probs = table.log_probs();
  for (std::size_t i = 0; i < table.trace_ids.size(); ++i) {
    double edge_product = std::exp(env.leaf_log_prob(table.trace_ids[i]));
    CHECK(std::abs(edge_product - std::exp(log_probs[i])) < 1e-10);
  }

  // sharpened: ancestral conditional products vs flat sharpened probabilities
  for (double t : {0.6, 1.0, 1.7}) {
    TraceSampler sampler(env, t);
    for (const auto& info : enumerate_traces(env)) {
      auto path = env.path_to(info.trace_id);
      double prod = 1.0;
      for (std::size_t s = 0; s + 1 < path.size(); ++s) {
        prod *= sampler.conditional_prob(path[s], path[s + 1]);
      }
      CHECK(std::abs(prod - sampler.trace_prob(info.trace_id)) < 1e-10);
    }
  }
}

TEST_CASE("policy probabilities sum to one") {
  EnvConfig config;
  config.depth = 7;
  config.branching = 2;
  config.n_traces_correct = 6;
  config.tail_mass = 0.2;
  config.seed = 2;
  TraceSpace env = generate_env(config);
  PolicyTable table = PolicyTable::from_env(env);
  double total = 0.0;
  for (double lp : table.log_probs()) total += std::exp(lp);
  CHECK(std::abs(total - 1.0) < 1e-12);
}

TEST_CASE("sample_trace: empirical frequencies match") {
  Rng rng(123);

  SUBCASE("T=1, equal leaves") {
    TraceSpace env = two_leaf_env(0.0, 0.0, true);
    int hits = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      if (sample_trace(env, 1.0, rng).trace_id == 1) ++hits;
    }
    double freq = static_cast<double>(hits) / n;
    double sigma = std::sqrt(0.25 / n);
    CHECK(std::abs(freq - 0.5) < 3 * sigma);
  }

  SUBCASE("T->0 limit samples the argmax") {
    TraceSpace env = two_leaf_env(std::log(0.7), std::log(0.3), true);
    int hits = 0;
    const int n = 5000;
    for (int i = 0; i < n; ++i) {
      if (sample_trace(env, 0.01, rng).trace_id == 1) ++hits;
    }
    CHECK(static_cast<double>(hits) / n > 0.999);
  }

  SUBCASE("T=0.5 sharpens (0.8, 0.2) to (0.941, 0.059)") {
    TraceSpace env = two_leaf_env(std::log(0.8), std::log(0.2), true);
    int hits = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      if (sample_trace(env, 0.5, rng).trace_id == 1) ++hits;
    }
    double expect = 0.64 / 0.68;  // 0.8^2 / (0.8^2 + 0.2^2)
    double freq = static_cast<double>(hits) / n;
    double sigma = std::sqrt(expect * (1 - expect) / n);
    CHECK(std::abs(freq - expect) < 3 * sigma);
  }

  SUBCASE("temperature must be positive") {
    TraceSpace env = two_leaf_env(0.0, 0.0, true);
    CHECK_THROWS_AS(sample_trace(env, 0.0, rng), ArgumentError);
    CHECK_THROWS_AS(sample_trace(env, -1.0, rng), ArgumentError);
  }
}

TEST_CASE("sampling from a policy table matches the env sampler law") {
  EnvConfig config;
  config.depth = 3;
  config.branching = 2;
  config.n_traces_correct = 2;
  config.tail_mass = 0.3;
  config.seed = 5;
  TraceSpace env = generate_env(config);
  PolicyTable table = PolicyTable::from_env(env);

  // exact sharpened distribution from the table
  double t = 0.6;
  TraceSampler sampler(env, t);
  Rng rng(99);
  std::map<NodeId, int> counts;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    ++counts[sample_trace(env, table, t, rng).trace_id];
  }
  for (const auto& [trace, count] : counts) {
    double expect = sampler.trace_prob(trace);
    double freq = static_cast<double>(count) / n;
    double sigma = std::sqrt(expect * (1 - expect) / n);
    CHECK(std::abs(freq - expect) < 4 * sigma + 1e-4);
  }
}

TEST_CASE("temperature sharpening preserves ranking") {
  EnvConfig config;
  config.depth = 4;
  config.branching = 3;
  config.n_traces_correct = 3;
  config.tail_mass = 0.2;
  config.seed = 13;
  TraceSpace env = generate_env(config);
  auto traces = enumerate_traces(env);
  for (double t : {0.3, 0.6, 1.0, 2.5}) {
    TraceSampler sampler(env, t);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      for (std::size_t j = i + 1; j < traces.size(); ++j) {
        double pi = std::exp(traces[i].log_prob_base);
        double pj = std::exp(traces[j].log_prob_base);
        if (pi > pj) {
          CHECK(sampler.trace_prob(traces[i].trace_id) >
                sampler.trace_prob(traces[j].trace_id));
        }
      }
    }
  }
}

TEST_CASE("trajectory samples are structurally consistent") {
  EnvConfig config;
  config.depth = 5;
  config.branching = 2;
  config.n_traces_correct = 4;
  config.tail_mass = 0.25;
  config.seed = 17;
  TraceSpace env = generate_env(config);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    TrajectorySample s = sample_trace(env, 0.8, rng);
    CHECK(s.path.front() == env.root);
    CHECK(s.path.back() == s.trace_id);
    CHECK(s.path.size() == static_cast<std::size_t>(env.depth) + 1);
    for (std::size_t t = 0; t + 1 < s.path.size(); ++t) {
      bool connected = false;
      for (const auto& e : env.nodes[s.path[t]].children) {
        if (e.child == s.path[t + 1]) connected = true;
      }
      CHECK(connected);
    }
    CHECK(s.correct == (env.nodes[s.trace_id].terminal_correct == 1));
    CHECK(s.log_prob_base ==
          doctest::Approx(env.leaf_log_prob(s.trace_id)).epsilon(1e-12));
  }
}

TEST_CASE("environment JSON round-trip") {
  EnvConfig config;
  config.depth = 4;
  config.branching = 2;
  config.n_traces_correct = 3;
  config.tail_mass = 0.1;
  config.seed = 77;
  TraceSpace env = generate_env(config);
  TraceSpace back = env_from_json(env_to_json(env));
  CHECK(env_to_json(back) == env_to_json(env));
  CHECK(back.nodes.size() == env.nodes.size());
  CHECK(back.id == env.id);
}
