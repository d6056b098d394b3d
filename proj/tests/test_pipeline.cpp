#include <doctest.h>

#include <flowsqueeze/pipeline.hpp>

#include <filesystem>

namespace fs = std::filesystem;
using namespace flowsqueeze;

namespace {

ExperimentConfig minimal_config(const std::string& out_dir) {
  ExperimentConfig c;
  c.output_dir = out_dir;
  c.seeds = {0};
  EnvGroup g;
  g.count = 1;
  g.config.depth = 3;
  g.config.branching = 2;
  g.config.n_traces_correct = 2;
  g.config.tail_mass = 0.4;
  g.config.seed = 1;
  c.env_groups = {g};
  c.extinction.n_steps = 10;
  c.search.n_samples = 2;
  c.verifier.epochs = 400;
  c.pairwise.epochs = 200;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("pipeline: minimal config yields six stage entries") {
  TempDir dir("fsq-minimal");
  Manifest m = run_pipeline(minimal_config(dir.path.string()));
  REQUIRE(m.stages.size() == 6);
  CHECK(m.stages[0].name == "env");
  CHECK(m.stages[1].name == "extinction");
  CHECK(m.stages[2].name == "sdf");
  CHECK(m.stages[3].name == "verify");
  CHECK(m.stages[4].name == "search");
  CHECK(m.stages[5].name == "report");
  CHECK(m.complete);
  for (const auto& stage : m.stages) {
    CHECK(!stage.artifacts.empty());
    for (const auto& a : stage.artifacts) {
      CHECK(fs::exists(dir.path / a.path));
      CHECK(!a.hash.empty());
    }
  }
  CHECK(fs::exists(dir.path / "manifest.json"));
}

TEST_CASE("pipeline: identical config and seeds give identical hashes") {
  TempDir dir_a("fsq-det-a");
  TempDir dir_b("fsq-det-b");
  Manifest a = run_pipeline(minimal_config(dir_a.path.string()));
  Manifest b = run_pipeline(minimal_config(dir_b.path.string()));
  REQUIRE(a.stages.size() == b.stages.size());
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    REQUIRE(a.stages[i].artifacts.size() == b.stages[i].artifacts.size());
    for (std::size_t j = 0; j < a.stages[i].artifacts.size(); ++j) {
      CHECK(a.stages[i].artifacts[j].path == b.stages[i].artifacts[j].path);
      CHECK(a.stages[i].artifacts[j].hash == b.stages[i].artifacts[j].hash);
    }
  }
}

TEST_CASE("pipeline: manifest JSON round-trip") {
  TempDir dir("fsq-manifest");
  Manifest m = run_pipeline(minimal_config(dir.path.string()));
  Manifest back = manifest_from_json(manifest_to_json(m));
  CHECK(back.stages.size() == m.stages.size());
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.complete == m.complete);
}

TEST_CASE("pipeline: config JSON round-trip preserves values") {
  ExperimentConfig c = minimal_config("somewhere");
  c.extinction.beta = 17.5;
  c.search.proposal_width = 9;
  ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(back.output_dir == "somewhere");
  CHECK(back.extinction.beta == doctest::Approx(17.5));
  CHECK(back.search.proposal_width == 9);
  CHECK(back.env_groups.size() == 1);
  CHECK(back.env_groups[0].config.depth == 3);
}

TEST_CASE("pipeline: config errors") {
  CHECK_THROWS_AS(config_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{}"), ConfigError);  // missing version
  CHECK_THROWS_AS(config_from_json("{\"version\":1,\"seeds\":[]}"),
                  ConfigError);
}

TEST_CASE("emit_plots: produces the three charts") {
  TempDir dir("fsq-plots");
  ExperimentConfig config = minimal_config(dir.path.string());
  // a hard environment whose 16 post-extinction samples are all incorrect,
  // so the extinction-zone subset (and its recovery chart) is nonempty
  EnvGroup hard;
  hard.count = 1;
  hard.config.depth = 6;
  hard.config.branching = 2;
  hard.config.n_traces_correct = 1;
  hard.config.tail_mass = 0.001;
  hard.config.seed = 9;
  config.env_groups.push_back(hard);
  run_pipeline(config);
  auto written = emit_plots(dir.path.string());
  CHECK(written.size() == 3);
  for (const auto& path : written) {
    CHECK(fs::exists(path));
    std::string svg = read_file(path);
    CHECK(svg.find("<svg") != std::string::npos);
  }
  // the extinction chart carries one polyline per category
  std::string fig = read_file((dir.path / "plots/fig1b.svg").string());
  std::size_t polylines = 0;
  for (std::size_t pos = fig.find("<polyline"); pos != std::string::npos;
       pos = fig.find("<polyline", pos + 1)) {
    ++polylines;
  }
  CHECK(polylines >= 2);  // Mode and Rare always; Endangered when present
}

TEST_CASE("emit_plots: empty or malformed logs fail loudly") {
  CHECK_THROWS_AS(extinction_csv_to_svg(""), ArgumentError);
  CHECK_THROWS_AS(
      extinction_csv_to_svg("step,env_id,seed\n"),  // missing columns
      SchemaError);
  CHECK_THROWS_AS(
      extinction_csv_to_svg(
          "step,env_id,seed,trace_id,category,pi,delta_log10,alpha,z_ratio\n"),
      ArgumentError);  // header only, no rows
}
