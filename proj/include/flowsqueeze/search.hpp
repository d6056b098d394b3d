#pragma once

/**
 * Inference-time procedures: Best-of-N selection, flow-guided beam search,
 * and the width-K visibility amplification arithmetic.
 */

#include <flowsqueeze/verifier.hpp>

#include <optional>
#include <vector>

namespace flowsqueeze {

struct SearchConfig {
  int n_samples = 16;     // N for Best-of-N
  int proposal_width = 4; // K candidates per beam item per depth
  int beam_width = 2;     // B
  double temperature = 0.6;
  std::uint64_t seed = 0;
};

struct BonOutcome {
  std::vector<TrajectorySample> samples;
  std::vector<std::optional<double>> scores;
  std::size_t selected = 0;   // index into samples
  bool correct = false;
  bool selection_error = false;  // every sample was out of support
};

/// Sample N trajectories from the frozen proposer and return the verifier's
/// argmax (ties by lower trace id). Out-of-support samples are skipped; if
/// all are, the outcome is a selection error and counts as incorrect.
BonOutcome best_of_n(const TraceSpace& env, const Verifier& verifier,
                     const SdfGraph& graph, const SearchConfig& cfg, Rng& rng);

struct BeamOutcome {
  TrajectorySample selected;
  bool search_error = false;
  /// Graph/env states retained in the beam after each depth.
  std::vector<std::vector<NodeId>> beams;
};

/**
 * Flow-guided beam search: at each depth every beam item proposes K child
 * candidates sampled from the proposer (or all children when propose_all is
 * set), the global top-B children by flow survive, ties by ascending state
 * id. Flow values are looked up through the graph's state support; children
 * outside the support are not rankable and are dropped.
 */
BeamOutcome beam_search(const TraceSpace& env, const SdfGraph& support,
                        std::span<const double> log_flow,
                        const SearchConfig& cfg, Rng& rng,
                        bool propose_all = false);

struct InclusionProb {
  double exact = 0.0;   // 1 - (1-p)^K
  double linear = 0.0;  // min(K p, 1)
};

InclusionProb inclusion_prob(double p, int k);

struct DiscoveryProb {
  double exact_product = 0.0;  // prod_t 1 - (1 - pi0(a_t | s_{t-1}))^K
  double amplified = 0.0;      // min(K^H pi0(tau), 1)
  double factor = 0.0;         // K^H
};

DiscoveryProb discovery_prob(const TrajectorySample& trace,
                             const TraceSpace& env, int k);

}  // namespace flowsqueeze
