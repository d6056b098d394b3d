#include <flowsqueeze/trace_space.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowsqueeze {

namespace {

/// Correct-leaf probability mass when `offset` is added to every edge lying
/// on a correct path, with per-node softmax normalization.
double correct_mass(const TraceSpace& tree,
                    const std::vector<std::vector<bool>>& edge_on_correct,
                    const std::vector<bool>& leaf_correct, double offset) {
  // log-prob per node accumulated root-down
  std::vector<double> lp(tree.nodes.size(), 0.0);
  double mass = 0.0;
  // nodes are created in BFS order, so parents precede children
  for (NodeId n = 0; n < tree.nodes.size(); ++n) {
    const auto& node = tree.nodes[n];
    if (node.children.empty()) {
      if (leaf_correct[n]) mass += std::exp(lp[n]);
      continue;
    }
    std::vector<double> z(node.children.size());
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      z[i] = node.children[i].log_prob +
             (edge_on_correct[n][i] ? offset : 0.0);
    }
    double lz = log_sum_exp(z);
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      lp[node.children[i].child] = lp[n] + z[i] - lz;
    }
  }
  return mass;
}

}  // namespace

TraceSpace generate_env(const EnvConfig& config) {
  if (config.depth < 1) throw ConfigError("generate_env: depth must be >= 1");
  if (config.branching < 2) {
    throw ConfigError("generate_env: branching must be >= 2");
  }
  if (!(config.tail_mass > 0.0 && config.tail_mass < 1.0)) {
    throw ConfigError("generate_env: tail_mass must lie in (0, 1)");
  }

  double n_leaves_f = std::pow(config.branching, config.depth);
  if (n_leaves_f > 1e6) throw ConfigError("generate_env: too many leaves");
  std::size_t n_leaves = static_cast<std::size_t>(std::llround(n_leaves_f));
  if (config.n_traces_correct < 1 ||
      static_cast<std::size_t>(config.n_traces_correct) >= n_leaves) {
    throw ConfigError(
        "generate_env: need 1 <= n_traces_correct < total leaves");
  }

  Rng rng = Rng::stream(config.seed, "env-gen");

  TraceSpace env;
  env.config = config;
  env.depth = config.depth;
  env.root = 0;

  // complete b-ary tree, BFS order
  env.nodes.emplace_back();
  std::vector<NodeId> frontier{0};
  for (int level = 0; level < config.depth; ++level) {
    std::vector<NodeId> next;
    for (NodeId parent : frontier) {
      for (int b = 0; b < config.branching; ++b) {
        NodeId child = static_cast<NodeId>(env.nodes.size());
        env.nodes.emplace_back();
        env.nodes[child].parent = parent;
        env.nodes[parent].children.push_back(
            {child, config.logit_std * rng.next_gaussian()});
        next.push_back(child);
      }
    }
    frontier = std::move(next);
  }

  // frontier now holds the leaves; pick the correct ones
  std::vector<NodeId> leaf_pool = frontier;
  rng.shuffle(leaf_pool);
  std::vector<bool> leaf_correct(env.nodes.size(), false);
  for (int i = 0; i < config.n_traces_correct; ++i) {
    leaf_correct[leaf_pool[i]] = true;
  }
  for (NodeId leaf : frontier) {
    env.nodes[leaf].terminal_correct = leaf_correct[leaf] ? 1 : 0;
  }

  // mark edges lying on any correct root path
  std::vector<std::vector<bool>> edge_on_correct(env.nodes.size());
  for (NodeId n = 0; n < env.nodes.size(); ++n) {
    edge_on_correct[n].assign(env.nodes[n].children.size(), false);
  }
  for (NodeId leaf : frontier) {
    if (!leaf_correct[leaf]) continue;
    NodeId cur = leaf;
    while (env.nodes[cur].parent != kNoNode) {
      NodeId p = env.nodes[cur].parent;
      for (std::size_t i = 0; i < env.nodes[p].children.size(); ++i) {
        if (env.nodes[p].children[i].child == cur) {
          edge_on_correct[p][i] = true;
        }
      }
      cur = p;
    }
  }

  // Correct mass is strictly increasing in the offset (correct traces carry
  // the offset on all depth edges, incorrect ones on at most depth-1), so
  // bisection is safe.
  double lo = -80.0, hi = 80.0;
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    if (correct_mass(env, edge_on_correct, leaf_correct, mid) <
        config.tail_mass) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double offset = 0.5 * (lo + hi);
  double achieved = correct_mass(env, edge_on_correct, leaf_correct, offset);
  if (std::abs(achieved - config.tail_mass) > 1e-6) {
    std::ostringstream msg;
    msg << "generate_env: tail_mass " << config.tail_mass
        << " infeasible for this topology (achieved " << achieved << ")";
    throw ConfigError(msg.str());
  }

  // bake the offset in and store per-node normalized log-probs
  for (NodeId n = 0; n < env.nodes.size(); ++n) {
    auto& node = env.nodes[n];
    if (node.children.empty()) continue;
    std::vector<double> z(node.children.size());
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      z[i] = node.children[i].log_prob + (edge_on_correct[n][i] ? offset : 0.0);
    }
    log_normalize(z);
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      node.children[i].log_prob = z[i];
    }
  }

  std::ostringstream label;
  label << "env-d" << config.depth << "b" << config.branching << "c"
        << config.n_traces_correct << "-s" << config.seed;
  env.id = label.str();
  return env;
}

std::vector<TraceInfo> enumerate_traces(const TraceSpace& env,
                                        std::size_t leaf_cap) {
  std::vector<TraceInfo> out;
  std::vector<double> lp(env.nodes.size(), 0.0);
  for (NodeId n = 0; n < env.nodes.size(); ++n) {
    const auto& node = env.nodes[n];
    for (const auto& e : node.children) {
      lp[e.child] = lp[n] + e.log_prob;
    }
    if (node.children.empty()) {
      out.push_back({n, lp[n], node.terminal_correct == 1});
      if (out.size() > leaf_cap) {
        throw SizeError("enumerate_traces: leaf cap exceeded");
      }
    }
  }
  return out;
}

PolicyTable PolicyTable::from_env(const TraceSpace& env) {
  PolicyTable table;
  for (const TraceInfo& t : enumerate_traces(env)) {
    table.trace_ids.push_back(t.trace_id);
    table.logits.push_back(t.log_prob_base);
  }
  return table;
}

std::size_t PolicyTable::index_of(NodeId trace) const {
  auto it = std::lower_bound(trace_ids.begin(), trace_ids.end(), trace);
  if (it == trace_ids.end() || *it != trace) {
    throw LookupError("PolicyTable: unknown trace id " +
                      std::to_string(trace));
  }
  return static_cast<std::size_t>(it - trace_ids.begin());
}

double PolicyTable::log_partition() const { return log_sum_exp(logits); }

std::vector<double> PolicyTable::log_probs() const {
  double lz = log_partition();
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

TraceSampler::TraceSampler(const TraceSpace& env, double temperature)
    : env_(&env), inv_t_(1.0 / temperature) {
  if (!(temperature > 0.0)) {
    throw ArgumentError("TraceSampler: temperature must be > 0");
  }
  // sharpened subtree partitions, bottom-up (children have larger ids)
  log_subtree_z_.assign(env.nodes.size(), 0.0);
  for (NodeId n = static_cast<NodeId>(env.nodes.size()); n-- > 0;) {
    const auto& node = env.nodes[n];
    if (node.children.empty()) continue;
    std::vector<double> terms(node.children.size());
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      terms[i] = node.children[i].log_prob * inv_t_ +
                 log_subtree_z_[node.children[i].child];
    }
    log_subtree_z_[n] = log_sum_exp(terms);
  }
  log_z_root_ = log_subtree_z_[env.root];
}

double TraceSampler::conditional_prob(NodeId node, NodeId child) const {
  const auto& n = env_->nodes[node];
  for (const auto& e : n.children) {
    if (e.child == child) {
      return std::exp(e.log_prob * inv_t_ + log_subtree_z_[child] -
                      log_subtree_z_[node]);
    }
  }
  throw LookupError("conditional_prob: not a child of node");
}

double TraceSampler::trace_prob(NodeId leaf) const {
  return std::exp(env_->leaf_log_prob(leaf) * inv_t_ - log_z_root_);
}

std::optional<NodeId> TraceSampler::sample_child(NodeId node, Rng& rng,
                                                 NodeId exclude) const {
  const auto& n = env_->nodes[node];
  std::vector<double> lw;
  std::vector<NodeId> ids;
  for (const auto& e : n.children) {
    if (e.child == exclude) continue;
    lw.push_back(e.log_prob * inv_t_ + log_subtree_z_[e.child]);
    ids.push_back(e.child);
  }
  if (ids.empty()) return std::nullopt;
  double mx = *std::max_element(lw.begin(), lw.end());
  if (!std::isfinite(mx)) return std::nullopt;
  return ids[rng.sample_log_weights(lw)];
}

TrajectorySample TraceSampler::finish(std::vector<NodeId> path,
                                      Rng& rng) const {
  NodeId cur = path.back();
  while (!env_->is_leaf(cur)) {
    cur = *sample_child(cur, rng);
    path.push_back(cur);
  }
  TrajectorySample s;
  s.path = std::move(path);
  s.trace_id = cur;
  s.correct = env_->nodes[cur].terminal_correct == 1;
  s.log_prob_base = env_->leaf_log_prob(cur);
  return s;
}

TrajectorySample TraceSampler::sample(Rng& rng) const {
  return finish({env_->root}, rng);
}

TrajectorySample TraceSampler::sample_from(NodeId start, Rng& rng) const {
  return finish({start}, rng);
}

TrajectorySample sample_trace(const TraceSpace& env, double temperature,
                              Rng& rng) {
  return TraceSampler(env, temperature).sample(rng);
}

TrajectorySample sample_trace(const TraceSpace& env, const PolicyTable& policy,
                              double temperature, Rng& rng) {
  if (!(temperature > 0.0)) {
    throw ArgumentError("sample_trace: temperature must be > 0");
  }
  std::vector<double> lw(policy.logits.size());
  for (std::size_t i = 0; i < lw.size(); ++i) {
    lw[i] = policy.logits[i] / temperature;
  }
  NodeId leaf = policy.trace_ids[rng.sample_log_weights(lw)];
  TrajectorySample s;
  s.path = env.path_to(leaf);
  s.trace_id = leaf;
  s.correct = env.nodes[leaf].terminal_correct == 1;
  s.log_prob_base = env.leaf_log_prob(leaf);
  return s;
}

namespace {

nlohmann::json config_to_json(const EnvConfig& c) {
  return {{"depth", c.depth},
          {"branching", c.branching},
          {"n_traces_correct", c.n_traces_correct},
          {"tail_mass", c.tail_mass},
          {"logit_std", c.logit_std},
          {"seed", c.seed}};
}

EnvConfig config_from_json(const nlohmann::json& j) {
  EnvConfig c;
  c.depth = j.at("depth").get<int>();
  c.branching = j.at("branching").get<int>();
  c.n_traces_correct = j.at("n_traces_correct").get<int>();
  c.tail_mass = j.at("tail_mass").get<double>();
  c.logit_std = j.value("logit_std", 1.0);
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string env_to_json(const TraceSpace& env) {
  nlohmann::json nodes = nlohmann::json::array();
  for (NodeId n = 0; n < env.nodes.size(); ++n) {
    const auto& node = env.nodes[n];
    nlohmann::json jn{{"id", n}};
    nlohmann::json children = nlohmann::json::array();
    for (const auto& e : node.children) {
      children.push_back({{"child", e.child}, {"logit", e.log_prob}});
    }
    jn["children"] = children;
    if (node.children.empty()) {
      jn["terminal_correct"] = node.terminal_correct == 1;
    }
    nodes.push_back(jn);
  }
  nlohmann::json doc{{"version", 1},
                     {"id", env.id},
                     {"config", config_to_json(env.config)},
                     {"nodes", nodes}};
  return doc.dump(2);
}

TraceSpace env_from_json(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text);
  if (doc.value("version", 0) != 1) {
    throw SchemaError("env_from_json: unsupported version");
  }
  TraceSpace env;
  env.config = config_from_json(doc.at("config"));
  env.depth = env.config.depth;
  env.id = doc.value("id", "env");
  env.nodes.resize(doc.at("nodes").size());
  for (const auto& jn : doc.at("nodes")) {
    NodeId id = jn.at("id").get<NodeId>();
    auto& node = env.nodes.at(id);
    for (const auto& jc : jn.at("children")) {
      NodeId child = jc.at("child").get<NodeId>();
      node.children.push_back({child, jc.at("logit").get<double>()});
      env.nodes.at(child).parent = id;
    }
    if (jn.contains("terminal_correct")) {
      node.terminal_correct = jn.at("terminal_correct").get<bool>() ? 1 : 0;
    }
  }
  return env;
}

void save_env(const TraceSpace& env, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("save_env: cannot open " + path);
  f << env_to_json(env) << "\n";
}

TraceSpace load_env(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("load_env: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return env_from_json(ss.str());
}

}  // namespace flowsqueeze
