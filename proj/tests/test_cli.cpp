#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "flatcover/io.hpp"

using namespace flatcover;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("flatcover_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(FLATCOVER_BIN) + " " + args + " >/dev/null 2>>" +
                          (scratch() / "stderr.txt").string();
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string out(const std::string& name) { return (scratch() / name).string(); }

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

json without_timestamp(const std::string& path) {
  json j = read_artifact(path);
  j.erase("timestamp");
  return j;
}

}  // namespace

TEST_CASE("flatcheck on an affine surface") {
  CHECK(run("flatcheck --surface '2x - y + 3' --out " + out("affine")) == 0);
  const json w = read_artifact(out("affine") + "/witness.json");
  CHECK(w["version"] == kSchemaVersion);
  CHECK(w["witness"]["bound"] == 0.0);
}

TEST_CASE("flatcheck audit against delta") {
  CHECK(run("flatcheck --surface 'x^2' --lo 0 --hi 0.5 --delta 0.01 --out " + out("fc")) == 2);
  CHECK(slurp(out("stderr.txt")).find("flatness") != std::string::npos);
  CHECK(run("flatcheck --surface 'x^2' --lo 0 --hi 0.5 --delta 0.01 --audit warn --out " + out("fc")) == 0);
  CHECK(run("flatcheck --surface 'x^2' --lo 0 --hi 0.5 --delta 0.05 --out " + out("fc")) == 0);
  const json w = read_artifact(out("fc") + "/witness.json");
  CHECK(w["witness"]["bound"].get<double>() == doctest::Approx(0.25 / 8).epsilon(0.02));
}

TEST_CASE("partition x^2 + y^4 end to end") {
  REQUIRE(run("partition --surface 'x^2+y^4' --delta 0.0009765625 --epsilon 0.05 --out " + out("p1")) == 0);
  const json a = read_artifact(out("p1") + "/partition.json");
  CHECK(a["kind"] == "partition");
  CHECK(a["audit"]["ok"] == true);
  CHECK(a["output"]["cells"].size() > 100);
  CHECK(a["output"]["cells"][0].contains("lineage"));
  CHECK(!a["output"]["records"].empty());
  CHECK(!a["output"]["ledger"]["factors"].empty());
  CHECK(fs::exists(out("p1") + "/cells.tsv"));
  const PartitionOutput back = partition_from_json(a["output"]);
  CHECK(static_cast<long>(back.cells.size()) == back.stats.cardinality);
}

TEST_CASE("identical jobs give identical artifacts") {
  REQUIRE(run("partition --surface 'x^3' --delta 0.00390625 --out " + out("d1")) == 0);
  REQUIRE(run("partition --surface 'x^3' --delta 0.00390625 --out " + out("d2")) == 0);
  CHECK(without_timestamp(out("d1") + "/partition.json") == without_timestamp(out("d2") + "/partition.json"));
  CHECK(slurp(out("d1") + "/cells.tsv") == slurp(out("d2") + "/cells.tsv"));
  REQUIRE(run("estimate --surface 'x^2' --p 6 --delta 0.0625 --N 64 --trials 4 --seed 3 --out " + out("e1")) == 0);
  REQUIRE(run("estimate --surface 'x^2' --p 6 --delta 0.0625 --N 64 --trials 4 --seed 3 --out " + out("e2")) == 0);
  CHECK(slurp(out("e1") + "/sweep.csv") == slurp(out("e2") + "/sweep.csv"));
}

TEST_CASE("estimate with p = q = 2") {
  REQUIRE(run("estimate --surface 'x^2' --deltas 0.0625,0.03125,0.015625 --N 128 --trials 4 --out " + out("est")) == 0);
  std::istringstream csv(slurp(out("est") + "/sweep.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "delta,ratio_max,tiles,p,q,alpha,seed");
  int rows = 0;
  while (std::getline(csv, line)) {
    const double r = std::stod(line.substr(line.find(',') + 1));
    CHECK(std::abs(r - 1) <= 1e-9);
    ++rows;
  }
  CHECK(rows == 3);
  const json e = read_artifact(out("est") + "/estimate.json");
  CHECK(e["fitted"] == true);
}

TEST_CASE("spec errors exit 3") {
  CHECK(run("partition --surface 'x^^2' --out " + out("bad")) == 3);
  CHECK(run("partition --surface 'x^2+y^2' --delta 2 --out " + out("bad")) == 3);
  CHECK(run("partition --surface 'x^2+y^2' --family nope --out " + out("bad")) == 3);
  CHECK(run("estimate --surface 'x^2+y^2' --out " + out("bad")) == 3);
  CHECK(run("flatcheck --surface 'x^2' --sense F9 --out " + out("bad")) == 3);
  CHECK(run("--no-such-flag") == 3);
  CHECK(run("report " + out("missing.json") + " --out " + out("bad")) == 3);
}

TEST_CASE("report") {
  CHECK(run("report --out " + out("r0")) == 0);
  CHECK(slurp(out("r0") + "/report.tsv").find("# partitions") != std::string::npos);

  REQUIRE(run("partition --surface 'x^2+y^2' --delta 0.015625 --out " + out("s1")) == 0);
  REQUIRE(run("partition --surface 'x^2+y^2' --delta 0.00390625 --out " + out("s2")) == 0);
  REQUIRE(run("report " + out("s1") + "/partition.json " + out("s2") + "/partition.json --out " + out("r1")) == 0);
  const std::string md = slurp(out("r1") + "/report.md");
  CHECK(md.find("| bivariate | x^2+y^2 | 0.015625 | 256 |") != std::string::npos);
  CHECK(md.find("| bivariate | x^2+y^2 | 0.00390625 | 1024 |") != std::string::npos);

  json old = read_artifact(out("s1") + "/partition.json");
  old["version"] = "flatcover/0";
  write_text(out("old.json"), dump_artifact(old));
  CHECK(run("report " + out("s2") + "/partition.json " + out("old.json") + " --out " + out("r2")) == 3);
  CHECK(slurp(out("stderr.txt")).find("SchemaMismatch") != std::string::npos);
}
