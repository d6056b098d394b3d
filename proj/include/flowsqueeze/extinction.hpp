#pragma once

/**
 * Sparse partial-Boltzmann update dynamics.
 *
 * A sampled trace's logit moves by R/beta; everything else is frozen and
 * decays passively through the growing partition function. The closed form
 * pi' = pi / (1 + alpha) for unsampled traces is checked against the
 * iterative softmax at every step.
 */

#include <flowsqueeze/trace_space.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

namespace flowsqueeze {

struct SparseUpdateConfig {
  double beta = 40.0;          // KL coefficient (update temperature)
  double temperature = 0.6;    // sharpened sampling T during training steps
  int n_rollouts = 64;         // offline pool size per environment
  int n_steps = 300;
  double reward_correct = 1.0;
  double reward_incorrect = 0.0;
  int n_samples_per_step = 16;   // draws per step from the pool-restricted policy
  double pool_temperature = 1.0; // pool is built from the base policy at T=1
};

/// Mass amplification rate: sum over sampled traces of pi * (exp(R/beta)-1).
double alpha(const PolicyTable& policy, const std::set<NodeId>& sampled,
             const std::map<NodeId, double>& rewards, double beta);

/// Logit update f += R/beta on sampled traces; iteration count bumped.
PolicyTable sparse_update(const PolicyTable& policy,
                          const std::set<NodeId>& sampled,
                          const std::map<NodeId, double>& rewards, double beta);

/// pi / (1 + alpha) — the decay law for unsampled traces.
double closed_form_unsampled(double prob, double alpha);

/// log10(pi_t / pi_0).
double rel_log_likelihood(double pi_t, double pi_0);

struct Category {
  bool mode = false;
  bool rare = false;
  bool endangered = false;
  bool any() const { return mode || rare || endangered; }
};

/**
 * Categorize the pooled correct traces of one environment:
 *  - Mode: top-2 by base likelihood
 *  - Rare: bottom-2 by base likelihood
 *  - Endangered: all of them, when the pool holds <= 2 distinct correct traces
 * Ties break by ascending trace id. Throws DataError when the pool holds no
 * correct trace (caller excludes and logs the environment).
 */
std::map<NodeId, Category> categorize_traces(
    const TraceSpace& env, const std::vector<TrajectorySample>& pool);

struct StepRecord {
  std::vector<NodeId> sampled;        // S_k, ascending
  double alpha = 0.0;
  double z_ratio = 0.0;               // Z_{k+1} / Z_k, measured independently
  std::vector<double> tracked_log_pi; // parallel to EnvRunLog::tracked
};

struct EnvRunLog {
  std::string env_id;
  std::uint64_t seed = 0;
  std::vector<NodeId> tracked;            // categorized trace ids, ascending
  std::map<NodeId, Category> categories;
  std::vector<double> tracked_log_pi0;
  std::vector<StepRecord> steps;
  std::vector<double> final_logits;       // f_K over all leaves, ascending id
  double max_closed_form_err = 0.0;       // worst |pi_iter - pi_closed| seen
  double max_partition_err = 0.0;         // worst |z_ratio - (1 + alpha)|
};

struct ExperimentLog {
  std::vector<EnvRunLog> runs;
  std::vector<std::string> excluded_envs;  // no correct trace in pool
};

/// Fixed-offline-pool dynamics: build a pool of n_rollouts base samples per
/// environment, then run n_steps sparse updates, each sampling
/// n_samples_per_step traces from the sharpened current policy renormalized
/// over the pool's trace set.
ExperimentLog run_extinction(const std::vector<TraceSpace>& envs,
                             const SparseUpdateConfig& cfg,
                             std::uint64_t seed);

struct CategoryDeltas {
  double mode = 0.0;
  double rare = 0.0;
  double endangered = 0.0;
  std::size_t n_mode = 0, n_rare = 0, n_endangered = 0;
};

/// Mean final delta-log10 per category over all runs in the log.
CategoryDeltas final_delta_means(const ExperimentLog& log);

/// Long-format CSV: step,env_id,seed,trace_id,category,pi,delta_log10,alpha,z_ratio
std::string extinction_log_to_csv(const ExperimentLog& log);

/// Environment configs of the default synthetic suite (10 broad + 3 narrow).
std::vector<EnvConfig> default_extinction_suite(std::uint64_t seed);

}  // namespace flowsqueeze
