#pragma once

/**
 * Sparse Deep Fork graph construction.
 *
 * Main trajectories are sampled from the proposer and prefix-merged into a
 * subtree of observed states; each intermediate node of each main trajectory
 * then launches one extra rollout with probability branch_p. Fork rollouts
 * are never forked again.
 */

#include <flowsqueeze/trace_space.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowsqueeze {

struct SoftRewardScheme {
  double correct = 10.0;
  double incorrect = 0.1;
};

struct SdfGraph {
  struct Provenance {
    enum class Kind { Main, Fork };
    Kind kind = Kind::Main;
    int rollout_index = 0;                    // main index or fork ordinal
    NodeId pivot_state = kNoNode;             // forks only
    std::optional<NodeId> excluded_child;     // forks only: resample exclusion
  };

  struct Node {
    NodeId state = kNoNode;            // TraceSpace node this maps to
    std::vector<NodeId> children;      // graph node ids, observation order
    std::optional<double> reward;      // leaves, after assign_rewards
    Provenance provenance;             // first observer of this node
  };

  struct ForkRecord {
    NodeId pivot = kNoNode;            // graph node id of the pivot
    int main_index = 0;                // main trajectory that spawned the fork
    NodeId leaf = kNoNode;             // graph node id of the fork's leaf
    std::optional<NodeId> excluded_child_state;
  };

  std::vector<Node> nodes;             // node id = index; 0 is the root
  NodeId root = 0;
  std::string env_ref;
  std::optional<SoftRewardScheme> scheme;  // set by assign_rewards
  std::vector<NodeId> main_leaves;         // graph leaf per main trajectory
  std::vector<ForkRecord> forks;

  bool is_leaf(NodeId n) const { return nodes[n].children.empty(); }

  /// state id -> graph node id (dedup is exact: one node per state)
  std::map<NodeId, NodeId> state_index() const;

  std::vector<NodeId> leaves() const;
  std::vector<NodeId> internal_nodes() const;
};

SdfGraph build_sdf(const TraceSpace& env, int n_main, double branch_p,
                   double temperature, Rng& rng);

/// Fully expanded observation graph over the whole environment
/// (observed children = all children at every node).
SdfGraph make_full_graph(const TraceSpace& env);

/// Set terminal rewards on the graph's leaves from the environment's
/// correctness labels via the soft scheme.
SdfGraph assign_rewards(SdfGraph graph, const TraceSpace& env,
                        const SoftRewardScheme& scheme);

bool leaf_is_correct(const SdfGraph& graph, NodeId node);

struct GraphStats {
  std::size_t n_nodes = 0;
  std::size_t n_leaves = 0;
  std::size_t n_forks = 0;
  std::size_t rollout_count = 0;  // mains + forks
  std::optional<double> frac_fork_counterfactual;
};

GraphStats graph_stats(const SdfGraph& graph);

std::string graph_to_json(const SdfGraph& graph);
SdfGraph graph_from_json(const std::string& text);
void save_graph(const SdfGraph& graph, const std::string& path);
SdfGraph load_graph(const std::string& path);

bool operator==(const SdfGraph::Provenance& a, const SdfGraph::Provenance& b);
bool operator==(const SdfGraph::Node& a, const SdfGraph::Node& b);
bool operator==(const SdfGraph::ForkRecord& a, const SdfGraph::ForkRecord& b);
bool operator==(const SdfGraph& a, const SdfGraph& b);

}  // namespace flowsqueeze
