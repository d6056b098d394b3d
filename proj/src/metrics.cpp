#include <flowsqueeze/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flowsqueeze {

double pass_at_k_single(int n, int c, int k) {
  if (k < 1 || k > n) throw ArgumentError("pass_at_k: need 1 <= k <= n");
  if (c < 0 || c > n) throw ArgumentError("pass_at_k: need 0 <= c <= n");
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) as a stable product
  double ratio = 1.0;
  for (int i = 0; i < k; ++i) {
    ratio *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  }
  return 1.0 - ratio;
}

double pass_at_k(const std::vector<std::vector<bool>>& samples_per_env,
                 int k) {
  if (samples_per_env.empty()) {
    throw ArgumentError("pass_at_k: no environments");
  }
  double sum = 0.0;
  for (const auto& samples : samples_per_env) {
    int n = static_cast<int>(samples.size());
    int c = static_cast<int>(std::count(samples.begin(), samples.end(), true));
    sum += pass_at_k_single(n, c, k);
  }
  return sum / static_cast<double>(samples_per_env.size());
}

double gap_closed(double pass1, double bon, double oracle) {
  if (!(oracle > pass1)) {
    throw ArgumentError("gap_closed: oracle must exceed pass1");
  }
  return (bon - pass1) / (oracle - pass1);
}

std::set<std::string> stress_subset(const SampleMap& samples,
                                    const SubsetSpec& spec) {
  std::set<std::string> out;
  for (const auto& [env, outcomes] : samples) {
    if (static_cast<int>(outcomes.size()) < spec.n_base) {
      throw DataError("stress_subset: fewer than n_base samples for " + env);
    }
    int c = static_cast<int>(
        std::count(outcomes.begin(), outcomes.end(), true));
    switch (spec.kind) {
      case SubsetSpec::Kind::RareSolution:
        if (c >= 1 && c <= spec.max_correct) out.insert(env);
        break;
      case SubsetSpec::Kind::ExtinctionZone:
        if (c == 0) out.insert(env);
        break;
    }
  }
  return out;
}

Report build_report(const std::vector<EvalRecord>& records,
                    const SampleMap& base_samples,
                    const std::map<std::string, std::set<std::string>>&
                        subsets) {
  Report r;
  std::set<std::string> methods;
  std::set<int> ns;
  for (const auto& rec : records) {
    methods.insert(rec.method);
    ns.insert(rec.n);
  }
  r.methods.assign(methods.begin(), methods.end());
  r.n_grid.assign(ns.begin(), ns.end());
  int n_max = r.n_grid.empty() ? 0 : r.n_grid.back();

  for (const std::string& m : r.methods) {
    for (int n : r.n_grid) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& rec : records) {
        if (rec.method == m && rec.n == n) {
          sum += rec.correct ? 1.0 : 0.0;
          ++count;
        }
      }
      if (count) r.bon[m][n] = sum / static_cast<double>(count);
    }
  }

  if (!base_samples.empty()) {
    double pass1 = 0.0, oracle = 0.0;
    for (const auto& [env, outcomes] : base_samples) {
      int n = static_cast<int>(outcomes.size());
      int c = static_cast<int>(
          std::count(outcomes.begin(), outcomes.end(), true));
      pass1 += static_cast<double>(c) / static_cast<double>(n);
      oracle += c > 0 ? 1.0 : 0.0;
      for (int k : r.n_grid) {
        if (k <= n) {
          r.random_row[k] += static_cast<double>(c) / static_cast<double>(n);
        }
      }
    }
    double n_env = static_cast<double>(base_samples.size());
    r.pass1 = pass1 / n_env;
    r.oracle_at_max = oracle / n_env;
    for (auto& [k, v] : r.random_row) v /= n_env;

    for (const std::string& m : r.methods) {
      auto it = r.bon.find(m);
      if (it == r.bon.end() || !it->second.count(n_max)) continue;
      if (r.oracle_at_max > r.pass1) {
        r.gap[m] = gap_closed(r.pass1, it->second.at(n_max), r.oracle_at_max);
      } else {
        r.gap[m] = std::nullopt;
      }
    }
  }

  for (const auto& [name, envs] : subsets) {
    for (const std::string& m : r.methods) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& rec : records) {
        if (rec.method == m && rec.n == n_max && envs.count(rec.env_id)) {
          sum += rec.correct ? 1.0 : 0.0;
          ++count;
        }
      }
      if (count) {
        r.subset_accuracy[name][m] = sum / static_cast<double>(count);
      }
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [env, outcomes] : base_samples) {
      if (!envs.count(env)) continue;
      int n = static_cast<int>(outcomes.size());
      int c = static_cast<int>(
          std::count(outcomes.begin(), outcomes.end(), true));
      sum += static_cast<double>(c) / static_cast<double>(n);
      ++count;
    }
    if (count) r.subset_random[name] = sum / static_cast<double>(count);
  }
  return r;
}

std::string format_ratio(double ratio) {
  double truncated = std::floor(ratio * 10.0) / 10.0;
  std::ostringstream out;
  out.precision(1);
  out << std::fixed << truncated << "x";
  return out.str();
}

namespace {

std::string pct(double v) {
  std::ostringstream out;
  out.precision(1);
  out << std::fixed << 100.0 * v << "%";
  return out.str();
}

}  // namespace

std::string report_to_markdown(const Report& r) {
  std::ostringstream md;
  md << "# Evaluation report\n\n";
  md << "pass@1 = " << pct(r.pass1) << ", oracle upper bound = "
     << pct(r.oracle_at_max) << "\n\n";
  md << "| method |";
  for (int n : r.n_grid) md << " BoN@" << n << " |";
  md << " Gap Closed |\n|---|";
  for (std::size_t i = 0; i < r.n_grid.size(); ++i) md << "---|";
  md << "---|\n";
  md << "| random |";
  for (int n : r.n_grid) {
    md << ' ' << (r.random_row.count(n) ? pct(r.random_row.at(n)) : "-")
       << " |";
  }
  md << " - |\n";
  for (const std::string& m : r.methods) {
    md << "| " << m << " |";
    for (int n : r.n_grid) {
      auto it = r.bon.find(m);
      bool has = it != r.bon.end() && it->second.count(n);
      md << ' ' << (has ? pct(it->second.at(n)) : "-") << " |";
    }
    auto git = r.gap.find(m);
    md << ' '
       << (git != r.gap.end() && git->second ? pct(*git->second) : "n/a")
       << " |\n";
  }
  for (const auto& [name, accs] : r.subset_accuracy) {
    md << "\n## Subset: " << name << "\n\n| method | accuracy |\n|---|---|\n";
    if (r.subset_random.count(name)) {
      md << "| random | " << pct(r.subset_random.at(name)) << " |\n";
    }
    for (const auto& [m, acc] : accs) {
      md << "| " << m << " | " << pct(acc) << " |\n";
    }
  }
  return md.str();
}

std::string report_to_csv(const Report& r) {
  std::ostringstream csv;
  csv << "section,method,n,value\n";
  csv.precision(10);
  csv << "summary,pass1,," << r.pass1 << "\n";
  csv << "summary,oracle,," << r.oracle_at_max << "\n";
  for (const auto& [n, v] : r.random_row) {
    csv << "bon,random," << n << ',' << v << "\n";
  }
  for (const std::string& m : r.methods) {
    auto it = r.bon.find(m);
    if (it == r.bon.end()) continue;
    for (const auto& [n, v] : it->second) {
      csv << "bon," << m << ',' << n << ',' << v << "\n";
    }
    auto git = r.gap.find(m);
    if (git != r.gap.end() && git->second) {
      csv << "gap," << m << ",," << *git->second << "\n";
    }
  }
  for (const auto& [name, accs] : r.subset_accuracy) {
    if (r.subset_random.count(name)) {
      csv << "subset:" << name << ",random,," << r.subset_random.at(name)
          << "\n";
    }
    for (const auto& [m, acc] : accs) {
      csv << "subset:" << name << ',' << m << ",," << acc << "\n";
    }
  }
  return csv.str();
}

std::string records_to_csv(const std::vector<EvalRecord>& records) {
  std::ostringstream csv;
  csv << "env_id,seed,method,n,correct\n";
  for (const auto& r : records) {
    csv << r.env_id << ',' << r.seed << ',' << r.method << ',' << r.n << ','
        << (r.correct ? 1 : 0) << "\n";
  }
  return csv.str();
}

std::vector<EvalRecord> records_from_csv(const std::string& text) {
  std::vector<EvalRecord> out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      if (line.rfind("env_id,", 0) != 0) {
        throw SchemaError("records_from_csv: unexpected header: " + line);
      }
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string env, seed, method, n, correct;
    if (!std::getline(row, env, ',') || !std::getline(row, seed, ',') ||
        !std::getline(row, method, ',') || !std::getline(row, n, ',') ||
        !std::getline(row, correct, ',')) {
      throw SchemaError("records_from_csv: malformed row: " + line);
    }
    EvalRecord rec;
    rec.env_id = env;
    rec.seed = std::stoull(seed);
    rec.method = method;
    rec.n = std::stoi(n);
    rec.correct = correct == "1";
    out.push_back(rec);
  }
  return out;
}

}  // namespace flowsqueeze
