#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flatcover/degen.hpp"
#include "flatcover/flatness.hpp"

namespace flatcover {

enum class Family { BivariatePoly, SeparableSum, PolyCurve, RadialSurface };

const char* family_name(Family f);
Family family_from_name(const std::string& s);

struct PartitionConfig {
  double delta = 1.0 / 256;
  double epsilon = 0.1;
  int m = 2;
  double p = 2, q = 2, alpha = 0;
  Family family = Family::BivariatePoly;
  double beta = 0;     // <= 0: estimated once per (H, k, d)
  int max_rounds = 0;  // > 0 caps the round schedule
  bool witnesses = true;
  bool overlap = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// sigma (.) phi_child(x) = U (phi_parent(Xi x) + A x + b)
struct RescaleRecord {
  AffineMap Xi;
  Mat U;
  Mat A;
  Vec b;
  Vec sigma;
  int parent = -1;
};

// Max over sample points of the reconstruction residual, relative to max(1, |phi_parent|).
double reconstruction_residual(const RescaleRecord& r, const PolyMap& parent, const PolyMap& child, int samples = 64,
                               std::uint64_t seed = 0);

struct Cell {
  Parallelogram region;
  FlatnessWitness witness;
  std::vector<int> lineage;  // indices into PartitionOutput::records, root first
  int round = 0;
};

enum class FactorForm { PowerOfDelta, LogCount, Constant };

struct CostFactor {
  std::string source;
  FactorForm form = FactorForm::Constant;
  double value = 1;
};

struct CostLedger {
  std::vector<CostFactor> factors;
  double fitted_exponent = 0;  // sum of the delta-power exponents

  void append(const CostFactor& f);
  double log2_total(double delta) const;
};

// Appends outer, inner_sup and the pigeonholing multiplier 2^(alpha + 1/2 - 1/q) log2(count).
CostLedger cost_combine(CostLedger ledger, const CostFactor& outer, const CostFactor& inner_sup, long count, double p,
                        double q, double alpha);

struct BootstrapCost {
  int N;
  double exponent;
};
BootstrapCost bootstrap_cost(double delta, double epsilon, double beta);

struct PartitionStats {
  long cardinality = 0;
  double min_dimension = 0;
  int depth = 0;   // last round with live tasks
  int rounds = 0;  // scheduled rounds
  long tasks = 0;
  int fallbacks = 0;
  double beta = 1;
};

struct PartitionOutput {
  int k = 0;
  double delta = 0;
  std::vector<Cell> cells;
  std::vector<RescaleRecord> records;
  OverlapProfile overlap;
  CostLedger ledger;
  PartitionStats stats;

  std::vector<Parallelogram> regions() const;
};

struct Interval {
  double lo, hi;
};

std::vector<Interval> sublevel_cover_1d(const PolyScalar& H, double sigma);
std::vector<Parallelogram> sublevel_cover_2d(const PolyScalar& H, double sigma, double epsilon);

// Axis boxes [lo, hi]; merges neighbours that agree on every other axis until stable.
struct Box {
  Vec lo, hi;
  AffineMap to_affine() const;
  Parallelogram pgram() const { return Parallelogram::box(lo, hi); }
};
std::vector<Box> merge_boxes(std::vector<Box> boxes);

// Left-anchored maximal flat intervals of a curve (k = 1) on [lo, hi].
std::vector<Interval> curve_flat_partition(const PolyMap& phi, double delta, int m, double lo = -1, double hi = 1);

// Boxes of [-1,1]^k on which phi is flat at scale ~delta, given inf |det D^2 phi| >= 1/K.
std::vector<Box> nondeg_cells(const PolyScalar& phi, double K, double delta, double zeta = 1.0);
PartitionOutput nondeg_partition(const PolyScalar& phi, double K, double delta, double zeta = 1.0);

// Quadtree on [-1,1]^k down to f1 <= delta.
std::vector<Box> finish_trivial(const PolyScalar& phi, double delta);

struct LocateCallbacks {
  // Cells of [-1,1]^k on which psi (H psi = 0) is flat at level ~sigma.
  std::function<std::vector<Parallelogram>(const PolyScalar& psi, double sigma)> degenerate;
  // Cells of [-1,1]^k on which phi is flat at level ~delta, given inf |H phi| >= 1/K.
  std::function<std::vector<Parallelogram>(const PolyScalar& phi, double K, double delta)> nondegenerate;
};

// Contract constants for callback output.
inline constexpr double kDegenerateContractC = 4.0;
inline constexpr double kNondegContractC = 64.0;

LocateCallbacks default_callbacks(int k);
std::vector<Parallelogram> cylinder_callback(const PolyScalar& psi, double sigma);

double estimate_beta(const DegDet& H, int k, int d, std::uint64_t seed = 0);

PartitionOutput degeneracy_locating(const PolyMap& phi, const DegDet& H, const PartitionConfig& cfg,
                                    const LocateCallbacks& cb);
PartitionOutput degeneracy_locating(const PolyMap& phi, const DegDet& H, const PartitionConfig& cfg);

PartitionOutput refined_bivariate_partition(const PolyScalar& phi, const PartitionConfig& cfg);
PartitionOutput refined_bivariate_partition(const PolyScalar& phi, double delta, double epsilon);

// Cartesian products of per-factor partitions at delta / J.
PartitionOutput separable_partition(const std::vector<PolyScalar>& factors, double delta, double epsilon);

enum class PsiKind { ClosedForm, Poly };

struct RadialSpec {
  PolyScalar r;  // on [-1,1]^k, values in [1,3]
  // l: dimension of t
  bool r_affine = false;
  int l = 1;
  PsiKind psi_kind = PsiKind::ClosedForm;
  std::optional<PolyScalar> psi;
  double C_poly = 1;

  int k() const { return r.k(); }
  double psi_eval(const Vec& t) const;
  Vec psi_grad(const Vec& t) const;
  Mat psi_hessian(const Vec& t) const;
  void validate() const;
};

struct PiTile {
  Parallelogram S;
  Parallelogram T;
};

struct SumRequest {
  Parallelogram S;
  Parallelogram T2;  // 2 T_0 + t_0
  double sigma, delta;
  double Lpsi;  // L psi(t_0)
  std::function<double(const Vec&)> r_tilde;
};
using SumCallback = std::function<std::vector<PiTile>(const SumRequest&)>;

struct RadialRun {
  std::vector<PiTile> tiles;
  std::vector<double> schedule;
  int steps = 0;
  double guard_max_ratio = 0;  // max |Q(theta) - r(s) Q(tau)| / delta_i
  double lemma_constant = 0;   // largest containment constant seen by the probes
  long guard_checks = 0;
  CostLedger ledger;
};

SumCallback default_sum_callback(const RadialSpec& spec, double delta);
RadialRun radial_reduce(const RadialSpec& spec, const PartitionConfig& cfg, const SumCallback& cb);
RadialRun radial_reduce(const RadialSpec& spec, const PartitionConfig& cfg);

struct RadialPartition {
  PartitionOutput out;
  std::vector<Interval> radial;  // flat intervals of gamma on [1,2]
  RadialRun run;                 // angular reduction, shared by every interval
  double guard_max_ratio = 0;
  double lemma_constant = 0;
};

// Graph of gamma(|t|) on the chart t = rho (c t', psi(t')), rho in [1,2], t' in [-1,1]^(n-2).
RadialPartition radial_surface_partition(const PolyScalar& gamma, double delta, double epsilon, int n = 3);
// Chart point for (rho, t').
Vec radial_chart_point(double rho, const Vec& tp);
// Halton probes of the chart (rho in [1,2], t' in [-1,1]^(n-2)) not covered by any cell.
long radial_uncovered(const RadialPartition& rp, int n, int probes = 10000);

struct PartitionAudit {
  long probes = 0;
  long uncovered = 0;
  bool contained = true;
  double min_dimension = 0;
  double max_flat_ratio = 0;  // max witness bound / delta
  bool dimension_ok = true;
  bool flatness_ok = true;
  std::string failing;  // first failing invariant, empty when all pass

  bool ok() const { return failing.empty(); }
};

PartitionAudit audit_partition(const PartitionOutput& out, const Parallelogram& domain, double delta, double flat_C,
                               double dim_floor, int probes = 10000);

}  // namespace flatcover
