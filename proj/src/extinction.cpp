#include <flowsqueeze/extinction.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flowsqueeze {

double alpha(const PolicyTable& policy, const std::set<NodeId>& sampled,
             const std::map<NodeId, double>& rewards, double beta) {
  if (!(beta > 0.0)) throw ArgumentError("alpha: beta must be > 0");
  std::vector<double> log_pi = policy.log_probs();
  double a = 0.0;
  for (NodeId trace : sampled) {
    auto it = rewards.find(trace);
    if (it == rewards.end()) {
      throw LookupError("alpha: no reward for sampled trace " +
                        std::to_string(trace));
    }
    double pi = std::exp(log_pi[policy.index_of(trace)]);
    a += pi * std::expm1(it->second / beta);
  }
  return a;
}

PolicyTable sparse_update(const PolicyTable& policy,
                          const std::set<NodeId>& sampled,
                          const std::map<NodeId, double>& rewards,
                          double beta) {
  if (!(beta > 0.0)) throw ArgumentError("sparse_update: beta must be > 0");
  PolicyTable next = policy;
  for (NodeId trace : sampled) {
    auto it = rewards.find(trace);
    if (it == rewards.end()) {
      throw LookupError("sparse_update: no reward for sampled trace " +
                        std::to_string(trace));
    }
    next.logits[next.index_of(trace)] += it->second / beta;
  }
  next.iteration = policy.iteration + 1;
  return next;
}

double closed_form_unsampled(double prob, double alpha) {
  return prob / (1.0 + alpha);
}

double rel_log_likelihood(double pi_t, double pi_0) {
  return std::log10(pi_t / pi_0);
}

std::map<NodeId, Category> categorize_traces(
    const TraceSpace& env, const std::vector<TrajectorySample>& pool) {
  std::set<NodeId> correct_set;
  for (const auto& s : pool) {
    if (s.correct) correct_set.insert(s.trace_id);
  }
  if (correct_set.empty()) {
    throw DataError("categorize_traces: no correct trace in pool for " +
                    env.id);
  }
  // sort by descending base likelihood, ties by ascending trace id
  std::vector<NodeId> correct(correct_set.begin(), correct_set.end());
  std::stable_sort(correct.begin(), correct.end(), [&](NodeId a, NodeId b) {
    double la = env.leaf_log_prob(a), lb = env.leaf_log_prob(b);
    if (la != lb) return la > lb;
    return a < b;
  });

  std::map<NodeId, Category> out;
  for (std::size_t i = 0; i < correct.size() && i < 2; ++i) {
    out[correct[i]].mode = true;
  }
  for (std::size_t i = correct.size() >= 2 ? correct.size() - 2 : 0;
       i < correct.size(); ++i) {
    out[correct[i]].rare = true;
  }
  if (correct.size() <= 2) {
    for (NodeId t : correct) out[t].endangered = true;
  }
  return out;
}

ExperimentLog run_extinction(const std::vector<TraceSpace>& envs,
                             const SparseUpdateConfig& cfg,
                             std::uint64_t seed) {
  if (envs.empty()) throw ArgumentError("run_extinction: no environments");
  ExperimentLog log;

  for (const TraceSpace& env : envs) {
    Rng rng = Rng::stream(seed ^ fnv1a64(env.id), "extinction");

    // fixed offline pool from the base policy
    std::vector<TrajectorySample> pool_samples;
    TraceSampler base_sampler(env, cfg.pool_temperature);
    for (int i = 0; i < cfg.n_rollouts; ++i) {
      pool_samples.push_back(base_sampler.sample(rng));
    }

    std::map<NodeId, Category> cats;
    try {
      cats = categorize_traces(env, pool_samples);
    } catch (const DataError&) {
      log.excluded_envs.push_back(env.id);
      continue;
    }

    std::set<NodeId> pool_set;
    for (const auto& s : pool_samples) pool_set.insert(s.trace_id);
    std::vector<NodeId> pool_traces(pool_set.begin(), pool_set.end());

    std::map<NodeId, double> rewards;
    for (NodeId t : pool_traces) {
      rewards[t] = env.nodes[t].terminal_correct == 1 ? cfg.reward_correct
                                                      : cfg.reward_incorrect;
    }

    EnvRunLog run;
    run.env_id = env.id;
    run.seed = seed;
    run.categories = cats;
    for (const auto& [trace, cat] : cats) run.tracked.push_back(trace);

    PolicyTable policy = PolicyTable::from_env(env);
    std::vector<double> log_pi = policy.log_probs();
    for (NodeId t : run.tracked) {
      run.tracked_log_pi0.push_back(log_pi[policy.index_of(t)]);
    }

    std::vector<std::size_t> pool_idx(pool_traces.size());
    for (std::size_t i = 0; i < pool_traces.size(); ++i) {
      pool_idx[i] = policy.index_of(pool_traces[i]);
    }

    for (int step = 0; step < cfg.n_steps; ++step) {
      // sample S_k from the sharpened current policy over pool traces
      std::vector<double> lw(pool_traces.size());
      for (std::size_t i = 0; i < pool_traces.size(); ++i) {
        lw[i] = policy.logits[pool_idx[i]] / cfg.temperature;
      }
      std::set<NodeId> sampled;
      for (int d = 0; d < cfg.n_samples_per_step; ++d) {
        sampled.insert(pool_traces[rng.sample_log_weights(lw)]);
      }

      double a = alpha(policy, sampled, rewards, cfg.beta);
      double lz_before = policy.log_partition();
      PolicyTable next = sparse_update(policy, sampled, rewards, cfg.beta);
      double z_ratio = std::exp(next.log_partition() - lz_before);

      // Proposition-1 check for every unsampled trace
      std::vector<double> pi_before = policy.log_probs();
      std::vector<double> pi_after = next.log_probs();
      for (std::size_t i = 0; i < policy.trace_ids.size(); ++i) {
        if (sampled.count(policy.trace_ids[i])) continue;
        double iter = std::exp(pi_after[i]);
        double closed = closed_form_unsampled(std::exp(pi_before[i]), a);
        run.max_closed_form_err =
            std::max(run.max_closed_form_err, std::abs(iter - closed));
      }
      run.max_partition_err =
          std::max(run.max_partition_err, std::abs(z_ratio - (1.0 + a)));

      StepRecord rec;
      rec.sampled.assign(sampled.begin(), sampled.end());
      rec.alpha = a;
      rec.z_ratio = z_ratio;
      for (std::size_t i = 0; i < run.tracked.size(); ++i) {
        rec.tracked_log_pi.push_back(
            pi_after[policy.index_of(run.tracked[i])]);
      }
      run.steps.push_back(std::move(rec));
      policy = std::move(next);
    }
    run.final_logits = policy.logits;
    log.runs.push_back(std::move(run));
  }
  return log;
}

CategoryDeltas final_delta_means(const ExperimentLog& log) {
  CategoryDeltas out;
  double sum_mode = 0.0, sum_rare = 0.0, sum_end = 0.0;
  for (const auto& run : log.runs) {
    if (run.steps.empty()) continue;
    const auto& last = run.steps.back();
    for (std::size_t i = 0; i < run.tracked.size(); ++i) {
      double delta =
          (last.tracked_log_pi[i] - run.tracked_log_pi0[i]) / std::log(10.0);
      const Category& c = run.categories.at(run.tracked[i]);
      if (c.mode) {
        sum_mode += delta;
        ++out.n_mode;
      }
      if (c.rare) {
        sum_rare += delta;
        ++out.n_rare;
      }
      if (c.endangered) {
        sum_end += delta;
        ++out.n_endangered;
      }
    }
  }
  if (out.n_mode) out.mode = sum_mode / static_cast<double>(out.n_mode);
  if (out.n_rare) out.rare = sum_rare / static_cast<double>(out.n_rare);
  if (out.n_endangered) {
    out.endangered = sum_end / static_cast<double>(out.n_endangered);
  }
  return out;
}

std::string extinction_log_to_csv(const ExperimentLog& log) {
  std::ostringstream csv;
  csv << "step,env_id,seed,trace_id,category,pi,delta_log10,alpha,z_ratio\n";
  csv.precision(12);
  for (const auto& run : log.runs) {
    for (std::size_t k = 0; k < run.steps.size(); ++k) {
      const auto& rec = run.steps[k];
      for (std::size_t i = 0; i < run.tracked.size(); ++i) {
        const Category& c = run.categories.at(run.tracked[i]);
        double delta =
            (rec.tracked_log_pi[i] - run.tracked_log_pi0[i]) / std::log(10.0);
        const char* names[3] = {"Mode", "Rare", "Endangered"};
        bool flags[3] = {c.mode, c.rare, c.endangered};
        for (int f = 0; f < 3; ++f) {
          if (!flags[f]) continue;
          csv << k << ',' << run.env_id << ',' << run.seed << ','
              << run.tracked[i] << ',' << names[f] << ','
              << std::exp(rec.tracked_log_pi[i]) << ',' << delta << ','
              << rec.alpha << ',' << rec.z_ratio << "\n";
        }
      }
    }
  }
  return csv.str();
}

std::vector<EnvConfig> default_extinction_suite(std::uint64_t seed) {
  std::vector<EnvConfig> out;
  // broad environments: many correct leaves, Mode/Rare well separated
  for (int i = 0; i < 10; ++i) {
    EnvConfig c;
    c.depth = 5;
    c.branching = 2;
    c.n_traces_correct = 10;
    c.tail_mass = 0.45;
    c.logit_std = 0.8;
    c.seed = seed * 1000 + static_cast<std::uint64_t>(i);
    out.push_back(c);
  }
  // narrow environments: exactly two correct leaves with skewed masses,
  // endangered by count regardless of pool composition
  for (int i = 0; i < 3; ++i) {
    EnvConfig c;
    c.depth = 6;
    c.branching = 2;
    c.n_traces_correct = 2;
    c.tail_mass = 0.45;
    c.logit_std = 2.2;
    c.seed = seed * 1000 + 100 + static_cast<std::uint64_t>(i);
    out.push_back(c);
  }
  return out;
}

}  // namespace flowsqueeze
