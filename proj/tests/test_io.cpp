#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "flatcover/io.hpp"

using namespace flatcover;

namespace {

json partition_artifact(const PartitionOutput& out, const std::string& surface, const char* version = kSchemaVersion) {
  PartitionAudit a;
  a.min_dimension = out.stats.min_dimension;
  a.max_flat_ratio = 0.5;
  json art = make_artifact("partition", {{"surface", surface},
                                         {"family", "bivariate"},
                                         {"output", to_json(out)},
                                         {"audit", to_json(a)}});
  art["version"] = version;
  return art;
}

}  // namespace

TEST_CASE("parse_poly") {
  const PolyScalar p = parse_poly("x^2+y^4");
  CHECK(p.k() == 2);
  CHECK(p.d() == 4);
  CHECK(p.coeff({2, 0}) == 1);
  CHECK(p.coeff({0, 4}) == 1);
  CHECK(p.sum_abs_coeff() == 2);

  const PolyScalar c = parse_poly("(x+y)^3");
  CHECK(c.coeff({2, 1}) == 3);
  CHECK(c.coeff({1, 2}) == 3);

  const PolyScalar imp = parse_poly("3x^2y - 2.5 - -x");
  CHECK(imp.coeff({2, 1}) == 3);
  CHECK(imp.coeff({0, 0}) == -2.5);
  CHECK(imp.coeff({1, 0}) == 1);

  CHECK(parse_poly("t^3").k() == 1);
  CHECK(parse_poly("x").d() == 1);
  CHECK(parse_poly("2").d() == 1);
  CHECK(parse_poly("x", 3).k() == 3);
  CHECK(parse_poly("x3^2").k() == 3);
  CHECK(parse_poly("-(x-1)^2").coeff({0}) == -1);

  for (const char* bad : {"x^^2", "x+", "x^1.5", "q", "t+x", "(x", "", "x^-1", "1e"}) {
    INFO(bad);
    CHECK_THROWS_AS(parse_poly(bad), Error);
  }
  CHECK_THROWS_AS(parse_poly("y", 1), Error);
}

TEST_CASE("parse_polymap") {
  const PolyMap c = parse_polymap("t^2,t^3");
  CHECK(c.k() == 1);
  CHECK(c.l() == 2);
  CHECK(c.d() == 3);
  CHECK(c[0].coeff({2}) == 1);
  CHECK_THROWS_AS(parse_polymap("t^2,"), Error);
}

TEST_CASE("format_poly round trip") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> coef(-20, 20);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + trial % 3, d = 1 + trial % 4;
    PolyScalar p(k, d);
    for (Eigen::Index i = 0; i < p.coeffs().size(); ++i) p.coeffs()(i) = coef(rng) / 4.0;
    const PolyScalar q = parse_poly(format_poly(p), k).with_degree(d);
    CHECK((q.coeffs() - p.coeffs()).cwiseAbs().maxCoeff() == 0);
  }
  CHECK(format_poly(PolyScalar(2, 2)) == "0");
  CHECK(format_poly(parse_poly("x^2 - 2y + 1")) == "x^2 - 2*y + 1");
}

TEST_CASE("partition json round trip") {
  const PartitionOutput out = refined_bivariate_partition(parse_poly("x^2*y^2"), 1.0 / 64, 0.1);
  REQUIRE(!out.records.empty());
  const json j = to_json(out);
  const PartitionOutput back = partition_from_json(json::parse(j.dump()));
  CHECK(to_json(back) == j);
  REQUIRE(back.cells.size() == out.cells.size());
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    CHECK(back.cells[i].region.center == out.cells[i].region.center);
    CHECK(back.cells[i].lineage == out.cells[i].lineage);
  }
  REQUIRE(back.records.size() == out.records.size());
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    CHECK(back.records[i].parent == out.records[i].parent);
    CHECK(back.records[i].Xi.matrix == out.records[i].Xi.matrix);
    CHECK(back.records[i].sigma == out.records[i].sigma);
  }

  json broken = j;
  for (auto& c : broken["cells"])
    if (!c["lineage"].empty()) {
      c["lineage"][0] = 100000;
      break;
    }
  CHECK_THROWS_AS(partition_from_json(broken), Error);
  json missing = j;
  missing.erase("ledger");
  CHECK_THROWS_AS(partition_from_json(missing), Error);
}

TEST_CASE("non-finite numbers") {
  DecEstimate e;
  e.p = INFINITY;
  const json j = to_json(e);
  CHECK(j["p"] == "inf");
  CHECK(std::isinf(vec_from_json(json::array({"inf", 1.0}))(0)));
}

TEST_CASE("artifact versions") {
  const json a = make_artifact("partition", json::object());
  CHECK(a["version"] == kSchemaVersion);
  CHECK_NOTHROW(check_version(a));
  json b = a;
  b["version"] = "flatcover/0";
  CHECK_THROWS_AS(check_version(b), Error);
  b.erase("version");
  CHECK_THROWS_AS(check_version(b), Error);
  // Sorted keys: equal documents dump to equal bytes regardless of insertion order.
  json c1, c2;
  c1["b"] = 1;
  c1["a"] = 2;
  c2["a"] = 2;
  c2["b"] = 1;
  CHECK(dump_artifact(c1) == dump_artifact(c2));
}

TEST_CASE("build_report") {
  const ReportTables empty = build_report({});
  CHECK(empty.partitions == 0);
  CHECK(empty.tsv.find("# partitions") != std::string::npos);

  const PolyScalar phi = parse_poly("x^2+y^2");
  const json a1 = partition_artifact(refined_bivariate_partition(phi, 1.0 / 64, 0.1), "x^2+y^2");
  const json a2 = partition_artifact(refined_bivariate_partition(phi, 1.0 / 256, 0.1), "x^2+y^2");
  const ReportTables r = build_report({a2, a1});
  CHECK(r.partitions == 2);
  // Two data rows, each with the same slope in the last column.
  const std::size_t at = r.tsv.find("cardinality_slope\n") + 18;
  const std::string body = r.tsv.substr(at, r.tsv.find("\n\n", at) - at);
  std::vector<std::string> lines;
  std::istringstream in(body);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 2);
  const std::string slope0 = lines[0].substr(lines[0].rfind('\t') + 1);
  CHECK(slope0 == lines[1].substr(lines[1].rfind('\t') + 1));
  CHECK(std::stod(slope0) == doctest::Approx(1.0).epsilon(0.05));  // 256 -> 1024 cells as delta drops 4x
  CHECK(lines[0].find("0.015625") != std::string::npos);  // larger delta first

  CHECK_THROWS_AS(build_report({a1, partition_artifact(PartitionOutput{}, "x", "flatcover/0")}), Error);
}
