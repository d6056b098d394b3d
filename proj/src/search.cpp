#include <flowsqueeze/search.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace flowsqueeze {

BonOutcome best_of_n(const TraceSpace& env, const Verifier& verifier,
                     const SdfGraph& graph, const SearchConfig& cfg,
                     Rng& rng) {
  if (cfg.n_samples < 1) throw ArgumentError("best_of_n: N must be >= 1");
  BonOutcome out;
  TraceSampler proposer(env, cfg.temperature);
  for (int i = 0; i < cfg.n_samples; ++i) {
    out.samples.push_back(proposer.sample(rng));
    out.scores.push_back(
        score_trajectory(verifier, out.samples.back(), graph));
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (!out.scores[i]) continue;
    if (!best) {
      best = i;
      continue;
    }
    double s = *out.scores[i], bs = *out.scores[*best];
    if (s > bs ||
        (s == bs && out.samples[i].trace_id < out.samples[*best].trace_id)) {
      best = i;
    }
  }
  if (!best) {
    out.selection_error = true;
    out.correct = false;
    return out;
  }
  out.selected = *best;
  out.correct = out.samples[*best].correct;
  return out;
}

BeamOutcome beam_search(const TraceSpace& env, const SdfGraph& support,
                        std::span<const double> log_flow,
                        const SearchConfig& cfg, Rng& rng, bool propose_all) {
  if (cfg.beam_width < 1 || cfg.proposal_width < cfg.beam_width) {
    throw ArgumentError("beam_search: need K >= B >= 1");
  }
  if (log_flow.size() != support.nodes.size()) {
    throw MappingError("beam_search: flow table does not match support graph");
  }
  auto index = support.state_index();
  auto flow_at = [&](NodeId state) -> std::optional<double> {
    auto it = index.find(state);
    if (it == index.end()) return std::nullopt;
    return log_flow[it->second];
  };

  TraceSampler proposer(env, cfg.temperature);
  BeamOutcome out;

  std::vector<NodeId> beam{env.root};
  while (true) {
    bool all_leaves = std::all_of(beam.begin(), beam.end(), [&](NodeId n) {
      return env.is_leaf(n);
    });
    if (all_leaves) break;

    // candidate children across the whole beam, deduplicated
    std::set<NodeId> candidates;
    for (NodeId item : beam) {
      if (env.is_leaf(item)) {
        candidates.insert(item);  // finished paths stay rankable
        continue;
      }
      if (propose_all) {
        for (const auto& e : env.nodes[item].children) {
          candidates.insert(e.child);
        }
      } else {
        for (int k = 0; k < cfg.proposal_width; ++k) {
          candidates.insert(*proposer.sample_child(item, rng));
        }
      }
    }

    // rank by flow, ties by ascending state id (std::set iterates ascending)
    std::vector<std::pair<double, NodeId>> ranked;
    for (NodeId c : candidates) {
      auto f = flow_at(c);
      if (f) ranked.emplace_back(*f, c);
    }
    if (ranked.empty()) {
      out.search_error = true;
      return out;
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first > b.first;
                       return a.second < b.second;
                     });
    beam.clear();
    for (std::size_t i = 0;
         i < ranked.size() && i < static_cast<std::size_t>(cfg.beam_width);
         ++i) {
      beam.push_back(ranked[i].second);
    }
    out.beams.push_back(beam);
  }

  // argmax-flow completed trajectory
  NodeId best = beam.front();
  double best_f = -std::numeric_limits<double>::infinity();
  for (NodeId leaf : beam) {
    auto f = flow_at(leaf);
    if (!f) continue;
    if (*f > best_f || (*f == best_f && leaf < best)) {
      best = leaf;
      best_f = *f;
    }
  }
  out.selected.path = env.path_to(best);
  out.selected.trace_id = best;
  out.selected.correct = env.nodes[best].terminal_correct == 1;
  out.selected.log_prob_base = env.leaf_log_prob(best);
  return out;
}

InclusionProb inclusion_prob(double p, int k) {
  if (p < 0.0 || p > 1.0) throw ArgumentError("inclusion_prob: p in [0,1]");
  if (k < 1) throw ArgumentError("inclusion_prob: K >= 1");
  InclusionProb out;
  out.exact = 1.0 - std::pow(1.0 - p, k);
  out.linear = std::min(static_cast<double>(k) * p, 1.0);
  return out;
}

DiscoveryProb discovery_prob(const TrajectorySample& trace,
                             const TraceSpace& env, int k) {
  if (k < 1) throw ArgumentError("discovery_prob: K >= 1");
  DiscoveryProb out;
  out.exact_product = 1.0;
  double log_pi0 = 0.0;
  int depth = 0;
  for (std::size_t t = 0; t + 1 < trace.path.size(); ++t) {
    NodeId node = trace.path[t], child = trace.path[t + 1];
    double p = 0.0;
    for (const auto& e : env.nodes[node].children) {
      if (e.child == child) {
        p = std::exp(e.log_prob);
        log_pi0 += e.log_prob;
        break;
      }
    }
    out.exact_product *= inclusion_prob(p, k).exact;
    ++depth;
  }
  out.factor = std::pow(static_cast<double>(k), depth);
  out.amplified = std::min(out.factor * std::exp(log_pi0), 1.0);
  return out;
}

}  // namespace flowsqueeze
