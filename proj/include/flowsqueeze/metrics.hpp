#pragma once

/**
 * Evaluation quantities: pass@k, BoN@N, Gap Closed, stress subsets, and the
 * report document that aggregates them.
 */

#include <flowsqueeze/errors.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace flowsqueeze {

/// Unbiased combinatorial estimator for a single environment:
/// 1 - C(n-c, k) / C(n, k).
double pass_at_k_single(int n, int c, int k);

/// Mean over environments; each entry is that environment's sample outcomes.
double pass_at_k(const std::vector<std::vector<bool>>& samples_per_env, int k);

/// (bon - pass1) / (oracle - pass1). Inputs in any common affine scale.
double gap_closed(double pass1, double bon, double oracle);

struct EvalRecord {
  std::string env_id;
  std::string method;  // base | rfm | pointwise | pairwise | oracle | random
  int n = 0;
  bool correct = false;
  std::uint64_t seed = 0;
};

struct SubsetSpec {
  enum class Kind { RareSolution, ExtinctionZone };
  Kind kind = Kind::RareSolution;
  int max_correct = 2;  // rare_solution: <= max_correct of n_base
  int n_base = 16;
};

/// Environment outcome vectors keyed by env id (base policy for
/// rare_solution, post-extinction policy for extinction_zone).
using SampleMap = std::map<std::string, std::vector<bool>>;

std::set<std::string> stress_subset(const SampleMap& samples,
                                    const SubsetSpec& spec);

struct Report {
  std::vector<std::string> methods;
  std::vector<int> n_grid;
  // method -> n -> mean BoN accuracy
  std::map<std::string, std::map<int, double>> bon;
  // expected accuracy of picking uniformly among the N samples
  std::map<int, double> random_row;
  double pass1 = 0.0;
  double oracle_at_max = 0.0;  // any-correct rate among the max-N samples
  std::map<std::string, std::optional<double>> gap;  // vs oracle_at_max
  // subset name -> method -> accuracy at max N
  std::map<std::string, std::map<std::string, double>> subset_accuracy;
  std::map<std::string, double> subset_random;  // subset name -> random acc
};

/// Aggregate evaluation records into the report document. base_samples is
/// per-env base outcomes (n_base each) used for pass@1, the random row, and
/// the oracle bound; subsets restrict accuracy rows to env subsets.
Report build_report(const std::vector<EvalRecord>& records,
                    const SampleMap& base_samples,
                    const std::map<std::string, std::set<std::string>>&
                        subsets = {});

std::string report_to_markdown(const Report& r);
std::string report_to_csv(const Report& r);

/// "4.0x"-style ratio display: truncates to one decimal.
std::string format_ratio(double ratio);

std::string records_to_csv(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> records_from_csv(const std::string& text);

}  // namespace flowsqueeze
