#pragma once

/**
 * Verifiers over Sparse Deep Fork graphs.
 *
 * The flow verifier learns one log-flow value per graph node by minimizing
 * the squared log-space mismatch between a node's flow and the sum of its
 * observed children's flows, plus a leaf term anchoring terminal flow to the
 * soft reward. Trained on a strict subgraph it converges to a conservative,
 * ranking-preserving underestimate of the true flow.
 *
 * Baselines: a pointwise future-success regressor and a pairwise logistic
 * ranker over fork-node siblings.
 */

#include <flowsqueeze/sdf.hpp>

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace flowsqueeze {

struct TrainHyper {
  double lr = 0.05;
  int epochs = 5000;
  double lambda = 1.0;
  double init_log_flow = -2.302585092994046;  // log(0.1), the background flow
  std::uint64_t seed = 0;
};

struct RfmEval {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d log_flow, per graph node
};

/// Loss and analytic gradient of the flow-matching objective in log-flow
/// coordinates. Children sums are evaluated with log-sum-exp.
RfmEval rfm_loss(std::span<const double> log_flow, const SdfGraph& graph,
                 double lambda);

struct FlowTable {
  std::vector<double> log_flow;  // per graph node, nats
  TrainHyper hyper;
  double final_loss = 0.0;
  int epochs_run = 0;
  std::vector<double> loss_curve;
};

/// Plain gradient descent until epochs are exhausted, loss < 1e-10, or the
/// loss plateaus (relative improvement < 1e-12 over 100 epochs).
FlowTable train_flow(const SdfGraph& graph, const TrainHyper& hyper = {});

/// Exact flow on the graph: leaf flow = reward, internal flow = sum over the
/// graph's (observed) children.
std::vector<double> oracle_flow(const SdfGraph& graph);

/// Exact flow on the full environment: per env node, the sum of soft rewards
/// of all reachable leaves.
std::vector<double> oracle_flow_env(const TraceSpace& env,
                                    const SoftRewardScheme& scheme);

/// F*(state) - F_trained(node) per graph node, against the environment
/// oracle. Nonnegative (up to training tolerance) on strict subgraphs.
std::vector<double> conservative_gap(const FlowTable& flow,
                                     const SdfGraph& graph,
                                     const TraceSpace& env,
                                     const SoftRewardScheme& scheme);

struct StepValueTable {
  std::vector<double> value;  // per graph node, in [0, 1]
};

/// Fraction of observed descendant leaves that are correct (the tabular MSE
/// minimizer of the step-level future-success target).
StepValueTable train_pointwise(const SdfGraph& graph);

struct PairHyper {
  double lr = 0.5;
  int epochs = 4000;
};

struct PairScoreTable {
  std::vector<double> score;  // per graph node, unbounded
  bool empty_flagged = false; // no valid pairs existed
  double final_loss = 0.0;
  std::size_t n_pairs = 0;
};

/// Bradley-Terry ranking over fork-node child pairs where exactly one side's
/// observed subtree contains a correct leaf. Zero valid pairs returns a
/// flagged empty table.
PairScoreTable train_pairwise(const SdfGraph& graph,
                              const PairHyper& hyper = {});

struct Verifier {
  enum class Kind { Rfm, Pointwise, Pairwise };
  Kind kind = Kind::Rfm;
  std::vector<double> values;  // log-flow / value / score per graph node
  bool flagged_empty = false;
  double final_loss = 0.0;
  std::string graph_ref;
};

Verifier to_verifier(const FlowTable& t, std::string graph_ref = "");
Verifier to_verifier(const StepValueTable& t, std::string graph_ref = "");
Verifier to_verifier(const PairScoreTable& t, std::string graph_ref = "");

/**
 * Score a trajectory against a verifier trained on `graph`:
 *   - pointwise/pairwise: min over per-step scores along the path (the root
 *     state is not a step),
 *   - flow: F at the terminal node.
 * Returns nothing when any required state is outside the graph's support.
 */
std::optional<double> score_trajectory(const Verifier& verifier,
                                       const TrajectorySample& trajectory,
                                       const SdfGraph& graph);

std::string verifier_to_json(const Verifier& v);
Verifier verifier_from_json(const std::string& text);
void save_verifier(const Verifier& v, const std::string& path);
Verifier load_verifier(const std::string& path);

const char* verifier_kind_name(Verifier::Kind kind);
Verifier::Kind verifier_kind_from_name(const std::string& name);

}  // namespace flowsqueeze
