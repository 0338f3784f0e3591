#include "bivas/cli.hpp"
#include "bivas/grid.hpp"
#include "bivas/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <sstream>

using namespace bivas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

nlohmann::json load(const std::string& path) { return nlohmann::json::parse(io::read_file(path)); }

}  // namespace

TEST_CASE("missing required flag is a usage error naming the flag") {
  const Outcome o = run({"fit"});
  CHECK(o.code == 2);
  CHECK(o.err.find("--data") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
}

TEST_CASE("simulate, fit, evaluate and report") {
  TempDir dir("bivas_cli_test");
  REQUIRE(run({"simulate", "--n", "200", "--p", "100", "--K", "10", "--pi", "0.3", "--alpha", "0.6", "--snr", "2",
               "--seed", "5", "--out", dir / "sim"}).code == 0);
  const Outcome fit = run({"fit", "--data", dir / "sim/data.csv", "--groups", dir / "sim/groups.csv",
                           "--grid-size", "5", "--threads", "2", "--out", dir / "fit"});
  REQUIRE(fit.code == 0);
  for (const char* f : {"model.json", "posterior.csv", "groups.csv", "selection.json"}) {
    CHECK(fs::exists(dir.path / "fit" / f));
  }
  const auto sel = load(dir / "fit/selection.json");
  CHECK(!sel["variables"].empty());
  for (const auto& v : sel["variables"]) CHECK(v["fdr"].get<double>() < 0.05);
  for (const auto& g : sel["groups"]) CHECK(g["fdr"].get<double>() < 0.05);
  const auto model = load(dir / "fit/model.json");
  CHECK(model["grid"].size() == 5);

  for (int rep = 1; rep <= 2; ++rep) {
    REQUIRE(run({"evaluate", "--fit", dir / "fit", "--truth", dir / "sim/truth.json", "--label", "snr=2",
                 "--label", "rep=" + std::to_string(rep), "--out", dir / "metrics.csv"}).code == 0);
  }
  const RawTable metrics = io::read_table(dir / "metrics.csv");
  CHECK(metrics.header == std::vector<std::string>{"snr", "rep", "auc", "group_auc", "fdr", "power", "mse"});
  CHECK(metrics.rows.size() == 2);

  REQUIRE(run({"report", "--metrics", dir / "metrics.csv", "--out", dir / "report.csv"}).code == 0);
  const RawTable report = io::read_table(dir / "report.csv");
  CHECK(report.header == std::vector<std::string>{"snr", "rep", "metric", "mean", "sd", "n"});
  CHECK(report.rows.size() == 10);
}

TEST_CASE("one grid point has weight one") {
  TempDir dir("bivas_cli_grid1");
  REQUIRE(run({"simulate", "--n", "60", "--p", "20", "--K", "4", "--out", dir / "sim"}).code == 0);
  REQUIRE(run({"fit", "--data", dir / "sim/data.csv", "--groups", dir / "sim/groups.csv", "--grid-size", "1",
               "--out", dir / "fit"}).code == 0);
  const auto model = load(dir / "fit/model.json");
  REQUIRE(model["grid"].size() == 1);
  CHECK(model["grid"][0]["weight"].get<double>() == 1.0);
}

TEST_CASE("inline group row and predict round trip") {
  TempDir dir("bivas_cli_inline");
  io::write_file(dir / "d.csv",
                 "y,a,b,c\n#group,g1,g1,g2\n1.0,0.5,1.0,-1\n2.0,1.5,0.0,0.5\n0.5,-0.5,2.0,1.5\n3.0,2.0,1.0,0.0\n"
                 "1.5,0.0,-1.0,2.5\n2.5,1.0,0.5,-0.5\n");
  REQUIRE(run({"fit", "--data", dir / "d.csv", "--grid-size", "3", "--out", dir / "fit"}).code == 0);
  REQUIRE(run({"predict", "--model", dir / "fit/model.json", "--data", dir / "d.csv", "--out", dir / "p.csv"}).code == 0);
  const RawTable pred = io::read_table(dir / "p.csv");
  CHECK(pred.rows.size() == 6);
}

TEST_CASE("validation errors exit 1, IO errors exit 2") {
  TempDir dir("bivas_cli_errors");
  io::write_file(dir / "bad.csv", "y,a\n1,x\n2,3\n3,4\n");
  io::write_file(dir / "g.csv", "a,g\n");
  CHECK(run({"fit", "--data", dir / "bad.csv", "--groups", dir / "g.csv", "--out", dir / "o"}).code == 1);
  CHECK(run({"fit", "--data", dir / "missing.csv", "--groups", dir / "g.csv", "--out", dir / "o"}).code == 2);
  io::write_file(dir / "ok.csv", "y,a\n1,2\n2,3\n3,5\n");
  CHECK(run({"fit", "--data", dir / "ok.csv", "--out", dir / "o"}).code == 1);
  CHECK(run({"fit", "--data", dir / "ok.csv", "--groups", dir / "g.csv", "--fdr", "1.5", "--out", dir / "o"}).code == 1);
  CHECK(run({"fit", "--data", dir / "ok.csv", "--groups", dir / "g.csv", "--grid-size", "0", "--out", dir / "o"}).code == 2);
}

TEST_CASE("multifit and multi-task predict") {
  TempDir dir("bivas_cli_mt");
  REQUIRE(run({"simulate", "--K", "30", "--tasks", "60,50,40", "--pi", "0.2", "--alpha", "0.8", "--out", dir / "sim"}).code == 0);
  REQUIRE(run({"multifit", "--task-data", dir / "sim/task1.csv", "--task-data", dir / "sim/task2.csv", "--task-data",
               dir / "sim/task3.csv", "--grid-size", "4", "--out", dir / "fit"}).code == 0);
  const auto model = load(dir / "fit/model.json");
  CHECK(model["params"]["tasks"].size() == 3);
  CHECK(run({"evaluate", "--fit", dir / "fit", "--truth", dir / "sim/truth.json"}).code == 0);
  REQUIRE(run({"predict", "--model", dir / "fit/model.json", "--task-data", dir / "sim/task1.csv", "--task-data",
               dir / "sim/task2.csv", "--task-data", dir / "sim/task3.csv", "--out", dir / "p.csv"}).code == 0);
  CHECK(io::read_table(dir / "p.csv").rows.size() == 150);
}
