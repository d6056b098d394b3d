#include <flowsqueeze/verifier.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowsqueeze {

RfmEval rfm_loss(std::span<const double> log_flow, const SdfGraph& graph,
                 double lambda) {
  if (log_flow.size() != graph.nodes.size()) {
    throw ArgumentError("rfm_loss: table size does not match graph");
  }
  if (lambda < 0.0) throw ArgumentError("rfm_loss: lambda must be >= 0");

  std::vector<NodeId> internal = graph.internal_nodes();
  std::vector<NodeId> leaves = graph.leaves();

  RfmEval out;
  out.grad.assign(log_flow.size(), 0.0);

  if (!internal.empty()) {
    double inv_n = 1.0 / static_cast<double>(internal.size());
    for (NodeId s : internal) {
      const auto& kids = graph.nodes[s].children;
      std::vector<double> child_lf(kids.size());
      for (std::size_t i = 0; i < kids.size(); ++i) {
        child_lf[i] = log_flow[kids[i]];
      }
      double lse = log_sum_exp(child_lf);
      double r = log_flow[s] - lse;
      out.loss += inv_n * r * r;
      out.grad[s] += 2.0 * inv_n * r;
      for (std::size_t i = 0; i < kids.size(); ++i) {
        double w = std::exp(child_lf[i] - lse);
        out.grad[kids[i]] -= 2.0 * inv_n * r * w;
      }
    }
  }

  if (lambda > 0.0 && !leaves.empty()) {
    double inv_n = 1.0 / static_cast<double>(leaves.size());
    for (NodeId s : leaves) {
      if (!graph.nodes[s].reward) {
        throw StateError("rfm_loss: leaf without reward (assign_rewards "
                         "first)");
      }
      double r = log_flow[s] - std::log(*graph.nodes[s].reward);
      out.loss += lambda * inv_n * r * r;
      out.grad[s] += 2.0 * lambda * inv_n * r;
    }
  }
  return out;
}

FlowTable train_flow(const SdfGraph& graph, const TrainHyper& hyper) {
  FlowTable table;
  table.hyper = hyper;
  table.log_flow.assign(graph.nodes.size(), hyper.init_log_flow);

  // The mean normalization in rfm_loss shrinks gradients with graph size;
  // stepping on the count-scaled gradient keeps the step size independent
  // of node count without moving the optimum (the global minimum is zero
  // loss either way).
  double scale = std::max<double>(1.0, graph.internal_nodes().size());

  double prev_window_loss = std::numeric_limits<double>::infinity();
  int epoch = 0;
  for (; epoch < hyper.epochs; ++epoch) {
    RfmEval eval = rfm_loss(table.log_flow, graph, hyper.lambda);
    if (!std::isfinite(eval.loss)) {
      std::ostringstream msg;
      msg << "train_flow: diverged at epoch " << epoch << " (lr=" << hyper.lr
          << ", epochs=" << hyper.epochs << ", lambda=" << hyper.lambda << ")";
      throw TrainingError(msg.str());
    }
    table.loss_curve.push_back(eval.loss);
    // stop well below the 1e-10 optimum criterion: per-node residuals must
    // undercut the 1e-6 monotonicity tolerance
    if (eval.loss < 1e-16) break;
    if (epoch % 100 == 0) {
      if (prev_window_loss - eval.loss <
          1e-12 * std::max(prev_window_loss, 1e-300)) {
        break;
      }
      prev_window_loss = eval.loss;
    }
    for (std::size_t i = 0; i < table.log_flow.size(); ++i) {
      table.log_flow[i] -= hyper.lr * scale * eval.grad[i];
    }
  }
  table.final_loss = rfm_loss(table.log_flow, graph, hyper.lambda).loss;
  table.epochs_run = epoch;
  return table;
}

std::vector<double> oracle_flow(const SdfGraph& graph) {
  std::vector<double> flow(graph.nodes.size(), 0.0);
  // children always have larger node ids than their first observation point
  // is not guaranteed for forks, so do an explicit post-order pass
  std::vector<int> state(graph.nodes.size(), 0);
  std::vector<NodeId> stack{graph.root};
  while (!stack.empty()) {
    NodeId n = stack.back();
    if (state[n] == 0) {
      state[n] = 1;
      for (NodeId c : graph.nodes[n].children) stack.push_back(c);
      continue;
    }
    stack.pop_back();
    if (state[n] == 2) continue;
    state[n] = 2;
    if (graph.is_leaf(n)) {
      if (!graph.nodes[n].reward) {
        throw StateError("oracle_flow: leaf without reward");
      }
      flow[n] = *graph.nodes[n].reward;
    } else {
      double s = 0.0;
      for (NodeId c : graph.nodes[n].children) s += flow[c];
      flow[n] = s;
    }
  }
  return flow;
}

std::vector<double> oracle_flow_env(const TraceSpace& env,
                                    const SoftRewardScheme& scheme) {
  if (env.nodes.size() > 4000000) {
    throw SizeError("oracle_flow_env: environment too large");
  }
  std::vector<double> flow(env.nodes.size(), 0.0);
  for (NodeId n = static_cast<NodeId>(env.nodes.size()); n-- > 0;) {
    const auto& node = env.nodes[n];
    if (node.children.empty()) {
      flow[n] = node.terminal_correct == 1 ? scheme.correct : scheme.incorrect;
    } else {
      double s = 0.0;
      for (const auto& e : node.children) s += flow[e.child];
      flow[n] = s;
    }
  }
  return flow;
}

std::vector<double> conservative_gap(const FlowTable& flow,
                                     const SdfGraph& graph,
                                     const TraceSpace& env,
                                     const SoftRewardScheme& scheme) {
  if (flow.log_flow.size() != graph.nodes.size()) {
    throw MappingError("conservative_gap: table size does not match graph");
  }
  std::vector<double> oracle = oracle_flow_env(env, scheme);
  std::vector<double> gap(graph.nodes.size());
  for (NodeId n = 0; n < graph.nodes.size(); ++n) {
    NodeId state = graph.nodes[n].state;
    if (state >= env.nodes.size()) {
      throw MappingError("conservative_gap: graph state outside environment");
    }
    gap[n] = oracle[state] - std::exp(flow.log_flow[n]);
  }
  return gap;
}

namespace {

/// Per-node counts of observed descendant leaves (total, correct).
void leaf_counts(const SdfGraph& graph, std::vector<std::size_t>& total,
                 std::vector<std::size_t>& correct) {
  total.assign(graph.nodes.size(), 0);
  correct.assign(graph.nodes.size(), 0);
  std::vector<int> state(graph.nodes.size(), 0);
  std::vector<NodeId> stack{graph.root};
  while (!stack.empty()) {
    NodeId n = stack.back();
    if (state[n] == 0) {
      state[n] = 1;
      for (NodeId c : graph.nodes[n].children) stack.push_back(c);
      continue;
    }
    stack.pop_back();
    if (state[n] == 2) continue;
    state[n] = 2;
    if (graph.is_leaf(n)) {
      total[n] = 1;
      correct[n] = leaf_is_correct(graph, n) ? 1 : 0;
    } else {
      for (NodeId c : graph.nodes[n].children) {
        total[n] += total[c];
        correct[n] += correct[c];
      }
    }
  }
}

}  // namespace

StepValueTable train_pointwise(const SdfGraph& graph) {
  std::vector<std::size_t> total, correct;
  leaf_counts(graph, total, correct);
  StepValueTable table;
  table.value.resize(graph.nodes.size());
  for (NodeId n = 0; n < graph.nodes.size(); ++n) {
    double v = static_cast<double>(correct[n]) /
               static_cast<double>(std::max<std::size_t>(total[n], 1));
    table.value[n] = std::clamp(v, 0.0, 1.0);
  }
  return table;
}

PairScoreTable train_pairwise(const SdfGraph& graph, const PairHyper& hyper) {
  std::vector<std::size_t> total, correct;
  leaf_counts(graph, total, correct);

  std::vector<std::pair<NodeId, NodeId>> pairs;  // (winner, loser)
  for (NodeId n = 0; n < graph.nodes.size(); ++n) {
    const auto& kids = graph.nodes[n].children;
    if (kids.size() < 2) continue;
    for (std::size_t i = 0; i < kids.size(); ++i) {
      for (std::size_t j = i + 1; j < kids.size(); ++j) {
        bool ci = correct[kids[i]] > 0, cj = correct[kids[j]] > 0;
        if (ci == cj) continue;
        pairs.emplace_back(ci ? kids[i] : kids[j], ci ? kids[j] : kids[i]);
      }
    }
  }

  PairScoreTable table;
  table.score.assign(graph.nodes.size(), 0.0);
  table.n_pairs = pairs.size();
  if (pairs.empty()) {
    table.empty_flagged = true;
    return table;
  }

  double inv_n = 1.0 / static_cast<double>(pairs.size());
  std::vector<double> grad(graph.nodes.size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& [w, l] : pairs) {
      double margin = table.score[w] - table.score[l];
      // -log sigma(margin), with the stable softplus form
      loss += inv_n * (margin > 0 ? std::log1p(std::exp(-margin))
                                  : -margin + std::log1p(std::exp(margin)));
      double g = -inv_n / (1.0 + std::exp(margin));  // d loss / d margin
      grad[w] += g;
      grad[l] -= g;
    }
    table.final_loss = loss;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      table.score[i] -= hyper.lr * grad[i];
    }
  }
  return table;
}

Verifier to_verifier(const FlowTable& t, std::string graph_ref) {
  Verifier v;
  v.kind = Verifier::Kind::Rfm;
  v.values = t.log_flow;
  v.final_loss = t.final_loss;
  v.graph_ref = std::move(graph_ref);
  return v;
}

Verifier to_verifier(const StepValueTable& t, std::string graph_ref) {
  Verifier v;
  v.kind = Verifier::Kind::Pointwise;
  v.values = t.value;
  v.graph_ref = std::move(graph_ref);
  return v;
}

Verifier to_verifier(const PairScoreTable& t, std::string graph_ref) {
  Verifier v;
  v.kind = Verifier::Kind::Pairwise;
  v.values = t.score;
  v.flagged_empty = t.empty_flagged;
  v.final_loss = t.final_loss;
  v.graph_ref = std::move(graph_ref);
  return v;
}

std::optional<double> score_trajectory(const Verifier& verifier,
                                       const TrajectorySample& trajectory,
                                       const SdfGraph& graph) {
  auto index = graph.state_index();
  if (verifier.kind == Verifier::Kind::Rfm) {
    auto it = index.find(trajectory.trace_id);
    if (it == index.end()) return std::nullopt;
    return std::exp(verifier.values[it->second]);
  }
  // step verifiers: min over the path's states, root excluded
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < trajectory.path.size(); ++i) {
    auto it = index.find(trajectory.path[i]);
    if (it == index.end()) return std::nullopt;
    best = std::min(best, verifier.values[it->second]);
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

const char* verifier_kind_name(Verifier::Kind kind) {
  switch (kind) {
    case Verifier::Kind::Rfm: return "rfm";
    case Verifier::Kind::Pointwise: return "pointwise";
    case Verifier::Kind::Pairwise: return "pairwise";
  }
  return "rfm";
}

Verifier::Kind verifier_kind_from_name(const std::string& name) {
  if (name == "rfm") return Verifier::Kind::Rfm;
  if (name == "pointwise") return Verifier::Kind::Pointwise;
  if (name == "pairwise") return Verifier::Kind::Pairwise;
  throw ArgumentError("unknown verifier kind: " + name);
}

std::string verifier_to_json(const Verifier& v) {
  nlohmann::json values = nlohmann::json::object();
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    values[std::to_string(i)] = v.values[i];
  }
  nlohmann::json doc{{"version", 1},
                     {"kind", verifier_kind_name(v.kind)},
                     {"graph_ref", v.graph_ref},
                     {"values", values},
                     {"flagged_empty", v.flagged_empty},
                     {"final_loss", v.final_loss}};
  return doc.dump(2);
}

Verifier verifier_from_json(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text);
  if (doc.value("version", 0) != 1) {
    throw SchemaError("verifier_from_json: unsupported version");
  }
  Verifier v;
  v.kind = verifier_kind_from_name(doc.at("kind").get<std::string>());
  v.graph_ref = doc.value("graph_ref", "");
  v.flagged_empty = doc.value("flagged_empty", false);
  v.final_loss = doc.value("final_loss", 0.0);
  const auto& values = doc.at("values");
  v.values.resize(values.size());
  for (auto it = values.begin(); it != values.end(); ++it) {
    v.values.at(std::stoul(it.key())) = it.value().get<double>();
  }
  return v;
}

void save_verifier(const Verifier& v, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("save_verifier: cannot open " + path);
  f << verifier_to_json(v) << "\n";
}

Verifier load_verifier(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("load_verifier: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return verifier_from_json(ss.str());
}

}  // namespace flowsqueeze
