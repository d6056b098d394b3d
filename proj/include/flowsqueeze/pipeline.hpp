#pragma once

/**
 * End-to-end experiment pipeline:
 *   env -> extinction -> sdf -> verify -> search -> report
 * Every stage writes its artifacts under the output directory and records
 * content hashes in a manifest; identical (config, seeds) reproduce
 * identical hashes.
 */

#include <flowsqueeze/extinction.hpp>
#include <flowsqueeze/metrics.hpp>
#include <flowsqueeze/search.hpp>

#include <string>
#include <vector>

namespace flowsqueeze {

struct EnvGroup {
  int count = 1;
  EnvConfig config;
};

struct ExperimentConfig {
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds{0};
  std::vector<EnvGroup> env_groups;  // empty -> default extinction suite
  std::uint64_t suite_seed = 0;
  SparseUpdateConfig extinction;
  struct Sdf {
    int n_main = 16;
    double branch_p = 0.5;
    double temperature = 0.6;
  } sdf;
  TrainHyper verifier;
  PairHyper pairwise;
  SearchConfig search;
  SoftRewardScheme reward_scheme;
  int n_base_samples = 16;  // base/extinct outcome draws per unit
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

struct ArtifactEntry {
  std::string path;  // relative to output_dir
  std::string hash;  // fnv1a-64, hex
};

struct StageEntry {
  std::string name;
  std::vector<ArtifactEntry> artifacts;
};

struct Manifest {
  int version = 1;
  std::string config_hash;
  std::vector<StageEntry> stages;
  bool complete = false;  // false when a stage failed partway
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);

Manifest run_pipeline(const ExperimentConfig& config);

/// Emit fig1b.svg, bon.svg, recovery.svg next to the pipeline artifacts.
/// Expects extinction/log.csv and report/report.csv to exist.
std::vector<std::string> emit_plots(const std::string& output_dir);

/// Mean delta-log10 per category vs step, as an SVG line chart.
std::string extinction_csv_to_svg(const std::string& csv_text);

std::string hash_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace flowsqueeze
