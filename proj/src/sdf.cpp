#include <flowsqueeze/sdf.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace flowsqueeze {

std::map<NodeId, NodeId> SdfGraph::state_index() const {
  std::map<NodeId, NodeId> idx;
  for (NodeId n = 0; n < nodes.size(); ++n) idx[nodes[n].state] = n;
  return idx;
}

std::vector<NodeId> SdfGraph::leaves() const {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < nodes.size(); ++n) {
    if (is_leaf(n)) out.push_back(n);
  }
  return out;
}

std::vector<NodeId> SdfGraph::internal_nodes() const {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < nodes.size(); ++n) {
    if (!is_leaf(n)) out.push_back(n);
  }
  return out;
}

namespace {

class GraphBuilder {
public:
  GraphBuilder(const TraceSpace& env, SdfGraph& graph)
      : env_(&env), graph_(&graph) {
    graph_->root = intern(env.root, {SdfGraph::Provenance::Kind::Main, 0,
                                     kNoNode, std::nullopt});
  }

  /// Graph node for a state, created with `prov` on first observation.
  NodeId intern(NodeId state, const SdfGraph::Provenance& prov) {
    auto it = state_to_node_.find(state);
    if (it != state_to_node_.end()) return it->second;
    NodeId id = static_cast<NodeId>(graph_->nodes.size());
    graph_->nodes.emplace_back();
    graph_->nodes[id].state = state;
    graph_->nodes[id].provenance = prov;
    state_to_node_.emplace(state, id);
    return id;
  }

  /// Add a root-anchored state path, merging shared prefixes. Returns the
  /// graph node ids along the path.
  std::vector<NodeId> add_path(const std::vector<NodeId>& states,
                               const SdfGraph::Provenance& prov) {
    std::vector<NodeId> out;
    out.reserve(states.size());
    NodeId prev = kNoNode;
    for (NodeId state : states) {
      NodeId cur = intern(state, prov);
      if (prev != kNoNode) link(prev, cur);
      out.push_back(cur);
      prev = cur;
    }
    return out;
  }

  void link(NodeId parent, NodeId child) {
    auto& kids = graph_->nodes[parent].children;
    if (std::find(kids.begin(), kids.end(), child) == kids.end()) {
      kids.push_back(child);
    }
  }

private:
  const TraceSpace* env_;
  SdfGraph* graph_;
  std::map<NodeId, NodeId> state_to_node_;
};

}  // namespace

SdfGraph build_sdf(const TraceSpace& env, int n_main, double branch_p,
                   double temperature, Rng& rng) {
  if (n_main < 1) throw ArgumentError("build_sdf: n_main must be >= 1");
  if (branch_p < 0.0 || branch_p > 1.0) {
    throw ArgumentError("build_sdf: branch_p must lie in [0, 1]");
  }

  SdfGraph graph;
  graph.env_ref = env.id;
  GraphBuilder builder(env, graph);
  TraceSampler proposer(env, temperature);

  std::vector<TrajectorySample> mains;
  for (int i = 0; i < n_main; ++i) {
    TrajectorySample s = proposer.sample(rng);
    auto path_nodes = builder.add_path(
        s.path, {SdfGraph::Provenance::Kind::Main, i, kNoNode, std::nullopt});
    graph.main_leaves.push_back(path_nodes.back());
    mains.push_back(std::move(s));
  }

  int fork_ordinal = 0;
  for (int i = 0; i < n_main; ++i) {
    const auto& path = mains[i].path;
    // intermediate nodes: everything strictly between root and leaf
    for (std::size_t t = 1; t + 1 < path.size(); ++t) {
      if (rng.next_double() >= branch_p) continue;
      NodeId pivot_state = path[t];
      NodeId taken_child = path[t + 1];

      // bias toward divergence: resample the first step excluding the
      // already-taken edge; fall back to the full child set when the
      // exclusion leaves no mass
      std::optional<NodeId> excluded = taken_child;
      std::optional<NodeId> first =
          proposer.sample_child(pivot_state, rng, taken_child);
      if (!first) {
        excluded = std::nullopt;
        first = proposer.sample_child(pivot_state, rng);
      }

      SdfGraph::Provenance prov{SdfGraph::Provenance::Kind::Fork, fork_ordinal,
                                pivot_state, excluded};
      TrajectorySample tail = proposer.sample_from(*first, rng);

      std::vector<NodeId> fork_states(path.begin(), path.begin() + t + 1);
      fork_states.insert(fork_states.end(), tail.path.begin(),
                         tail.path.end());
      auto fork_nodes = builder.add_path(fork_states, prov);

      SdfGraph::ForkRecord rec;
      rec.pivot = fork_nodes[t];
      rec.main_index = i;
      rec.leaf = fork_nodes.back();
      rec.excluded_child_state = excluded;
      graph.forks.push_back(rec);
      ++fork_ordinal;
    }
  }
  return graph;
}

SdfGraph make_full_graph(const TraceSpace& env) {
  SdfGraph graph;
  graph.env_ref = env.id;
  graph.nodes.resize(env.nodes.size());
  for (NodeId n = 0; n < env.nodes.size(); ++n) {
    graph.nodes[n].state = n;
    graph.nodes[n].provenance = {SdfGraph::Provenance::Kind::Main, 0, kNoNode,
                                 std::nullopt};
    for (const auto& e : env.nodes[n].children) {
      graph.nodes[n].children.push_back(e.child);
    }
  }
  graph.root = env.root;
  return graph;
}

SdfGraph assign_rewards(SdfGraph graph, const TraceSpace& env,
                        const SoftRewardScheme& scheme) {
  if (!(scheme.correct > scheme.incorrect && scheme.incorrect > 0.0)) {
    throw ArgumentError("assign_rewards: need correct > incorrect > 0");
  }
  for (NodeId n = 0; n < graph.nodes.size(); ++n) {
    if (!graph.is_leaf(n)) continue;
    NodeId state = graph.nodes[n].state;
    if (!env.is_leaf(state)) {
      throw StructuralError(
          "assign_rewards: graph leaf maps to non-terminal state " +
          std::to_string(state));
    }
    graph.nodes[n].reward = env.nodes[state].terminal_correct == 1
                                ? scheme.correct
                                : scheme.incorrect;
  }
  graph.scheme = scheme;
  return graph;
}

bool leaf_is_correct(const SdfGraph& graph, NodeId node) {
  if (!graph.scheme || !graph.nodes[node].reward) {
    throw StateError("leaf_is_correct: rewards not assigned");
  }
  return *graph.nodes[node].reward == graph.scheme->correct;
}

GraphStats graph_stats(const SdfGraph& graph) {
  GraphStats stats;
  stats.n_nodes = graph.nodes.size();
  stats.n_leaves = graph.leaves().size();
  stats.n_forks = graph.forks.size();
  stats.rollout_count = graph.main_leaves.size() + graph.forks.size();
  if (!graph.forks.empty()) {
    std::size_t counterfactual = 0;
    for (const auto& fork : graph.forks) {
      const auto& fork_reward = graph.nodes[fork.leaf].reward;
      const auto& main_reward =
          graph.nodes[graph.main_leaves[fork.main_index]].reward;
      if (!fork_reward || !main_reward) {
        throw StateError("graph_stats: rewards not assigned");
      }
      if (*fork_reward != *main_reward) ++counterfactual;
    }
    stats.frac_fork_counterfactual = static_cast<double>(counterfactual) /
                                     static_cast<double>(graph.forks.size());
  }
  return stats;
}

namespace {

nlohmann::json provenance_to_json(const SdfGraph::Provenance& p) {
  nlohmann::json j{{"kind", p.kind == SdfGraph::Provenance::Kind::Main
                                ? "main"
                                : "fork"},
                   {"index", p.rollout_index}};
  if (p.kind == SdfGraph::Provenance::Kind::Fork) {
    j["pivot_state"] = p.pivot_state;
    if (p.excluded_child) j["excluded_child"] = *p.excluded_child;
  }
  return j;
}

SdfGraph::Provenance provenance_from_json(const nlohmann::json& j) {
  SdfGraph::Provenance p;
  p.kind = j.at("kind").get<std::string>() == "fork"
               ? SdfGraph::Provenance::Kind::Fork
               : SdfGraph::Provenance::Kind::Main;
  p.rollout_index = j.at("index").get<int>();
  if (p.kind == SdfGraph::Provenance::Kind::Fork) {
    p.pivot_state = j.at("pivot_state").get<NodeId>();
    if (j.contains("excluded_child")) {
      p.excluded_child = j.at("excluded_child").get<NodeId>();
    }
  }
  return p;
}

}  // namespace

std::string graph_to_json(const SdfGraph& graph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (NodeId n = 0; n < graph.nodes.size(); ++n) {
    const auto& node = graph.nodes[n];
    nlohmann::json jn{{"id", n},
                      {"state", node.state},
                      {"children", node.children},
                      {"provenance", provenance_to_json(node.provenance)}};
    if (node.reward) jn["reward"] = *node.reward;
    nodes.push_back(jn);
  }
  nlohmann::json doc{{"version", 1},
                     {"env_ref", graph.env_ref},
                     {"nodes", nodes},
                     {"main_leaves", graph.main_leaves}};
  nlohmann::json forks = nlohmann::json::array();
  for (const auto& f : graph.forks) {
    nlohmann::json jf{{"pivot", f.pivot},
                      {"main_index", f.main_index},
                      {"leaf", f.leaf}};
    if (f.excluded_child_state) {
      jf["excluded_child_state"] = *f.excluded_child_state;
    }
    forks.push_back(jf);
  }
  doc["forks"] = forks;
  if (graph.scheme) {
    doc["reward_scheme"] = {{"correct", graph.scheme->correct},
                            {"incorrect", graph.scheme->incorrect}};
  }
  return doc.dump(2);
}

SdfGraph graph_from_json(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text);
  if (doc.value("version", 0) != 1) {
    throw SchemaError("graph_from_json: unsupported version");
  }
  SdfGraph graph;
  graph.env_ref = doc.value("env_ref", "");
  graph.nodes.resize(doc.at("nodes").size());
  for (const auto& jn : doc.at("nodes")) {
    NodeId id = jn.at("id").get<NodeId>();
    auto& node = graph.nodes.at(id);
    node.state = jn.at("state").get<NodeId>();
    node.children = jn.at("children").get<std::vector<NodeId>>();
    node.provenance = provenance_from_json(jn.at("provenance"));
    if (jn.contains("reward")) node.reward = jn.at("reward").get<double>();
  }
  graph.main_leaves = doc.value("main_leaves", std::vector<NodeId>{});
  for (const auto& jf : doc.value("forks", nlohmann::json::array())) {
    SdfGraph::ForkRecord f;
    f.pivot = jf.at("pivot").get<NodeId>();
    f.main_index = jf.at("main_index").get<int>();
    f.leaf = jf.at("leaf").get<NodeId>();
    if (jf.contains("excluded_child_state")) {
      f.excluded_child_state = jf.at("excluded_child_state").get<NodeId>();
    }
    graph.forks.push_back(f);
  }
  if (doc.contains("reward_scheme")) {
    graph.scheme = SoftRewardScheme{
        doc.at("reward_scheme").at("correct").get<double>(),
        doc.at("reward_scheme").at("incorrect").get<double>()};
  }
  return graph;
}

void save_graph(const SdfGraph& graph, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("save_graph: cannot open " + path);
  f << graph_to_json(graph) << "\n";
}

SdfGraph load_graph(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("load_graph: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return graph_from_json(ss.str());
}

bool operator==(const SdfGraph::Provenance& a, const SdfGraph::Provenance& b) {
  return a.kind == b.kind && a.rollout_index == b.rollout_index &&
         a.pivot_state == b.pivot_state && a.excluded_child == b.excluded_child;
}

bool operator==(const SdfGraph::Node& a, const SdfGraph::Node& b) {
  return a.state == b.state && a.children == b.children &&
         a.reward == b.reward && a.provenance == b.provenance;
}

bool operator==(const SdfGraph::ForkRecord& a, const SdfGraph::ForkRecord& b) {
  return a.pivot == b.pivot && a.main_index == b.main_index &&
         a.leaf == b.leaf && a.excluded_child_state == b.excluded_child_state;
}

bool operator==(const SdfGraph& a, const SdfGraph& b) {
  return a.nodes == b.nodes && a.root == b.root && a.env_ref == b.env_ref &&
         a.main_leaves == b.main_leaves && a.forks == b.forks &&
         ((!a.scheme && !b.scheme) ||
          (a.scheme && b.scheme && a.scheme->correct == b.scheme->correct &&
           a.scheme->incorrect == b.scheme->incorrect));
}

}  // namespace flowsqueeze
