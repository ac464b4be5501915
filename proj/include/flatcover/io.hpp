#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "flatcover/decest.hpp"
#include "flatcover/partition.hpp"

namespace flatcover {

using json = nlohmann::json;

inline constexpr const char* kSchemaVersion = "flatcover/1";

// Polynomial text: numbers, variables, + - * ^ (non-negative integer powers), parentheses, implicit products
// ("3x^2y"). Variables are x, y, z, w (indices 0..3), x1..x9, or a lone t, s or r for one variable.
// k = 0 infers the dimension from the highest variable index used.
PolyScalar parse_poly(const std::string& text, int k = 0);
// Comma-separated components sharing one dimension and degree bound.
PolyMap parse_polymap(const std::string& text, int k = 0);
std::string format_poly(const PolyScalar& p);

json to_json(const Vec& v);
json to_json(const Mat& m);
json to_json(const AffineMap& a);
json to_json(const Parallelogram& p);
json to_json(const FlatnessWitness& w);
json to_json(const RescaleRecord& r);
json to_json(const OverlapProfile& o);
json to_json(const CostLedger& l);
json to_json(const PartitionStats& s);
json to_json(const PartitionAudit& a);
json to_json(const PartitionConfig& c);
json to_json(const PartitionOutput& out);
json to_json(const DegCert& c);
json to_json(const DecEstimate& e);
json to_json(const SweepResult& s);

Vec vec_from_json(const json& j);
Mat mat_from_json(const json& j);
AffineMap affine_from_json(const json& j);
Parallelogram pgram_from_json(const json& j);
FlatnessWitness witness_from_json(const json& j);
RescaleRecord record_from_json(const json& j);
CostLedger ledger_from_json(const json& j);
OverlapProfile overlap_from_json(const json& j);
PartitionOutput partition_from_json(const json& j);

// {version, kind, ...body}
json make_artifact(const std::string& kind, json body);
// Throws SchemaMismatch unless j carries kSchemaVersion.
void check_version(const json& j);
// Key order is sorted, so equal artifacts serialize to equal bytes.
std::string dump_artifact(const json& j);
void write_text(const std::string& path, const std::string& text);
json read_artifact(const std::string& path);

// Plot table: one row per cell (center, half lengths, bound, round).
std::string cells_tsv(const PartitionOutput& out);

struct ReportTables {
  std::string tsv;
  std::string markdown;
  int partitions = 0;
  int estimates = 0;
};

// Cardinality/overlap against delta per surface, fitted slopes, and per-family regression constants.
ReportTables build_report(const std::vector<json>& artifacts);

}  // namespace flatcover
