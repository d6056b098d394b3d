#pragma once

/**
 * Synthetic reasoning environments.
 *
 * A TraceSpace is a rooted tree of reasoning states with per-edge base-policy
 * log-probabilities and correctness labels on the leaves. Every trace
 * (root-to-leaf path) has an exactly enumerable probability, which is what
 * makes the rest of the laboratory checkable against brute force.
 *
 * Edge logits are stored per-node normalized (log-softmax), so the flat
 * trace-level softmax over summed edge logits coincides with the product of
 * per-edge probabilities on every leaf.
 */

#include <flowsqueeze/errors.hpp>
#include <flowsqueeze/logmath.hpp>
#include <flowsqueeze/rng.hpp>

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowsqueeze {

using NodeId = std::uint32_t;
constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

struct EnvConfig {
  int depth = 5;
  int branching = 2;
  int n_traces_correct = 4;
  double tail_mass = 0.25;
  double logit_std = 1.0;
  std::uint64_t seed = 0;
};

struct TraceSpace {
  struct Edge {
    NodeId child;
    double log_prob;  // per-node normalized, nats
  };
  struct Node {
    std::vector<Edge> children;         // empty iff leaf
    NodeId parent = kNoNode;            // kNoNode for root
    int terminal_correct = -1;          // -1 internal, 0/1 for leaves
  };

  std::vector<Node> nodes;
  NodeId root = 0;
  int depth = 0;
  EnvConfig config;
  std::string id;  // stable label used in logs and reports

  bool is_leaf(NodeId n) const { return nodes[n].children.empty(); }

  std::vector<NodeId> leaves() const {
    std::vector<NodeId> out;
    for (NodeId n = 0; n < nodes.size(); ++n) {
      if (is_leaf(n)) out.push_back(n);
    }
    return out;
  }

  /// Root-to-node path (inclusive of both endpoints).
  std::vector<NodeId> path_to(NodeId n) const {
    std::vector<NodeId> rev;
    for (NodeId cur = n; cur != kNoNode; cur = nodes[cur].parent) {
      rev.push_back(cur);
    }
    return {rev.rbegin(), rev.rend()};
  }

  /// Sum of per-edge log-probabilities along the root path.
  double leaf_log_prob(NodeId leaf) const {
    double lp = 0.0;
    NodeId cur = leaf;
    while (nodes[cur].parent != kNoNode) {
      NodeId p = nodes[cur].parent;
      for (const Edge& e : nodes[p].children) {
        if (e.child == cur) {
          lp += e.log_prob;
          break;
        }
      }
      cur = p;
    }
    return lp;
  }
};

struct TraceInfo {
  NodeId trace_id;       // leaf node id
  double log_prob_base;  // nats
  bool correct;
};

struct TrajectorySample {
  std::vector<NodeId> path;  // root ... leaf
  NodeId trace_id = kNoNode;
  bool correct = false;
  double log_prob_base = 0.0;  // nats, under the base (T=1) policy
};

/// Trace-level logit table f_k over the leaves of a TraceSpace.
struct PolicyTable {
  std::vector<NodeId> trace_ids;  // ascending leaf ids
  std::vector<double> logits;     // f_k, nats
  int iteration = 0;

  static PolicyTable from_env(const TraceSpace& env);

  std::size_t index_of(NodeId trace) const;

  /// log pi(trace_ids[i]) for all i.
  std::vector<double> log_probs() const;
  double log_partition() const;
};

/// Generate a synthetic environment whose base policy assigns total
/// probability tail_mass to the correct leaves (solved by bisecting a single
/// logit offset on correct-path edges).
TraceSpace generate_env(const EnvConfig& config);

/// Brute-force trace enumeration; per-trace exponentials sum to 1.
std::vector<TraceInfo> enumerate_traces(const TraceSpace& env,
                                        std::size_t leaf_cap = 1000000);

/**
 * Exact sampler for the temperature-sharpened trace distribution
 * Q(tau) ~ pi(tau)^{1/T}, realized by ancestral sampling with subtree
 * partition weights. At T=1 the subtree weights are unity and this reduces
 * to plain per-edge softmax sampling.
 */
class TraceSampler {
public:
  TraceSampler(const TraceSpace& env, double temperature);

  TrajectorySample sample(Rng& rng) const;

  /// Continue a rollout from an arbitrary node down to a leaf.
  TrajectorySample sample_from(NodeId start, Rng& rng) const;

  /// Sample one child of `node`, optionally excluding a given child. Returns
  /// nothing when exclusion leaves no probability mass.
  std::optional<NodeId> sample_child(NodeId node, Rng& rng,
                                     NodeId exclude = kNoNode) const;

  /// Sharpened conditional probability of stepping node -> child.
  double conditional_prob(NodeId node, NodeId child) const;

  /// Sharpened trace-level probability of a leaf (flat view).
  double trace_prob(NodeId leaf) const;

  const TraceSpace& env() const { return *env_; }

private:
  const TraceSpace* env_;
  double inv_t_;
  std::vector<double> log_subtree_z_;  // per node, sharpened subtree partition
  double log_z_root_;

  TrajectorySample finish(std::vector<NodeId> path, Rng& rng) const;
};

/// Sample a trajectory from the environment's base policy sharpened by 1/T.
TrajectorySample sample_trace(const TraceSpace& env, double temperature,
                              Rng& rng);

/// Sample a trajectory from a trace-level policy table sharpened by 1/T.
TrajectorySample sample_trace(const TraceSpace& env, const PolicyTable& policy,
                              double temperature, Rng& rng);

std::string env_to_json(const TraceSpace& env);
TraceSpace env_from_json(const std::string& text);
void save_env(const TraceSpace& env, const std::string& path);
TraceSpace load_env(const std::string& path);

}  // namespace flowsqueeze
