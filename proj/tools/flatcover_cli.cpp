#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flatcover/decest.hpp"
#include "flatcover/degen.hpp"
#include "flatcover/flatness.hpp"
#include "flatcover/io.hpp"
#include "flatcover/partition.hpp"

using namespace flatcover;

namespace {

constexpr int kExitAudit = 2;
constexpr int kExitSpec = 3;
constexpr double kFlatC = 100;

struct Options {
  double delta = 1.0 / 256;
  double epsilon = 0.1;
  double p = 2, q = 2, alpha = 0;
  int m = 0;  // 0: command default
  std::uint64_t seed = 0;
  int trials = 32;
  std::string out = ".";
  std::string audit = "strict";

  std::string surface;
  std::string family;
  int k = 0;
  int n = 3;
  std::string lo, hi;
  std::string sense = "F1";
  std::string det;
  double sigma = 0.01;
  std::string deltas;
  int N = 256;
  double cover_exponent = 0.5;
  std::vector<std::string> inputs;
};

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::BadSpec, "bad number '" + item + "' in list '" + s + "'");
    }
  }
  return v;
}

Vec to_vec(const std::vector<double>& v) {
  Vec x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i)) = v[i];
  return x;
}

std::vector<std::string> split_semicolons(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ';')) out.push_back(item);
  return out;
}

std::string path_in(const Options& o, const std::string& name) {
  std::filesystem::create_directories(o.out);
  return (std::filesystem::path(o.out) / name).string();
}

void emit(const Options& o, const std::string& name, json art) {
  art["timestamp"] = timestamp();
  write_text(path_in(o, name), dump_artifact(art));
}

// Returns the exit code for a finished audit.
int finish_audit(const Options& o, const std::string& failing) {
  if (failing.empty()) return 0;
  std::cerr << "audit failed: " << failing << "\n";
  return o.audit == "warn" ? 0 : kExitAudit;
}

DegDet det_for(const Options& o, const PolyMap& phi) {
  std::string d = o.det;
  if (d.empty()) d = phi.k() == 1 ? "wronskian" : "hessian";
  if (d == "hessian") {
    if (phi.l() != 1) throw Error(ErrorKind::BadSpec, "hessian needs a scalar surface");
    return DegDet::hessian();
  }
  if (d == "wronskian") {
    if (phi.k() != 1) throw Error(ErrorKind::BadSpec, "wronskian needs a curve (one variable)");
    return DegDet::wronskian(o.m > 0 ? o.m : phi.l());
  }
  throw Error(ErrorKind::BadSpec, "unknown determinant '" + d + "' (hessian|wronskian)");
}

PartitionConfig config_from(const Options& o, Family f) {
  PartitionConfig cfg;
  cfg.delta = o.delta;
  cfg.epsilon = o.epsilon;
  cfg.p = o.p;
  cfg.q = o.q;
  cfg.alpha = o.alpha;
  cfg.seed = o.seed;
  cfg.family = f;
  if (o.m > 0) cfg.m = o.m;
  cfg.validate();
  return cfg;
}

PartitionAudit radial_audit(const RadialPartition& rp, int n, double delta) {
  PartitionAudit a;
  a.probes = 10000;
  a.uncovered = radial_uncovered(rp, n, static_cast<int>(a.probes));
  a.min_dimension = rp.out.stats.min_dimension;
  for (const auto& c : rp.out.cells) a.max_flat_ratio = std::max(a.max_flat_ratio, c.witness.bound / delta);
  a.flatness_ok = a.max_flat_ratio <= kFlatC;
  if (a.uncovered > 0)
    a.failing = "coverage";
  else if (!a.flatness_ok)
    a.failing = "flatness";
  return a;
}

int cmd_partition(const Options& o) {
  std::string fam = o.family;
  json extra = json::object();
  PartitionOutput out;
  PartitionAudit audit;
  PartitionConfig cfg;
  if (fam.empty()) fam = o.surface.find(';') != std::string::npos ? "separable" : "";
  if (fam.empty()) fam = parse_polymap(o.surface, o.k).k() == 1 ? "curve" : "bivariate";
  const Family f = family_from_name(fam);
  cfg = config_from(o, f);

  switch (f) {
    case Family::BivariatePoly: {
      const PolyMap phi = parse_polymap(o.surface, o.k ? o.k : 2);
      if (phi.k() != 2 || phi.l() != 1) throw Error(ErrorKind::BadSpec, "bivariate family needs a scalar in x, y");
      out = refined_bivariate_partition(phi[0], cfg);
      audit = audit_partition(out, Parallelogram::cube(2), cfg.delta, kFlatC, cfg.delta);
      break;
    }
    case Family::SeparableSum: {
      std::vector<PolyScalar> factors;
      for (const auto& s : split_semicolons(o.surface)) factors.push_back(parse_poly(s));
      out = separable_partition(factors, cfg.delta, cfg.epsilon);
      audit = audit_partition(out, Parallelogram::cube(out.k), cfg.delta, kFlatC, cfg.delta / 4);
      break;
    }
    case Family::PolyCurve: {
      const PolyMap phi = parse_polymap(o.surface, 1);
      if (phi.k() != 1) throw Error(ErrorKind::BadSpec, "curve family needs one variable");
      const int m = o.m > 0 ? o.m : phi.l();
      out.k = 1;
      out.delta = cfg.delta;
      for (const auto& I : curve_flat_partition(phi, cfg.delta, m)) {
        Cell c;
        c.region = Parallelogram::box(Vec::Constant(1, I.lo), Vec::Constant(1, I.hi));
        c.witness = flat_f1(phi, c.region, m);
        out.cells.push_back(std::move(c));
      }
      out.overlap = overlap_profile(out.regions(), {1.0, 2.0});
      out.stats.cardinality = static_cast<long>(out.cells.size());
      out.stats.min_dimension = INFINITY;
      for (const auto& c : out.cells) out.stats.min_dimension = std::min(out.stats.min_dimension, c.region.min_side());
      out.ledger.append({"curve intervals", FactorForm::LogCount, static_cast<double>(out.cells.size())});
      audit = audit_partition(out, Parallelogram::cube(1), cfg.delta, kFlatC, 0);
      break;
    }
    case Family::RadialSurface: {
      const PolyScalar gamma = parse_poly(o.surface, 1);
      const RadialPartition rp = radial_surface_partition(gamma, cfg.delta, cfg.epsilon, o.n);
      out = rp.out;
      audit = radial_audit(rp, o.n, cfg.delta);
      json radial = json::array();
      for (const auto& I : rp.radial) radial.push_back({I.lo, I.hi});
      extra = {{"radial_intervals", radial},
               {"steps", rp.run.steps},
               {"angular_tiles", rp.run.tiles.size()},
               {"guard_max_ratio", rp.guard_max_ratio},
               {"lemma_constant", rp.lemma_constant},
               {"n", o.n}};
      break;
    }
  }

  json art = make_artifact("partition", {{"surface", o.surface},
                                         {"family", family_name(f)},
                                         {"config", to_json(cfg)},
                                         {"output", to_json(out)},
                                         {"audit", to_json(audit)}});
  if (!extra.empty()) art["radial"] = extra;
  emit(o, "partition.json", art);
  write_text(path_in(o, "cells.tsv"), cells_tsv(out));
  std::cout << family_name(f) << " " << o.surface << ": " << out.cells.size() << " cells, max flat ratio "
            << audit.max_flat_ratio << ", uncovered " << audit.uncovered << "/" << audit.probes << "\n";
  return finish_audit(o, audit.failing);
}

int cmd_flatcheck(const Options& o, bool delta_given) {
  const PolyMap phi = parse_polymap(o.surface, o.k);
  const int k = phi.k();
  Vec lo = Vec::Constant(k, -1), hi = Vec::Constant(k, 1);
  if (!o.lo.empty()) lo = to_vec(parse_list(o.lo));
  if (!o.hi.empty()) hi = to_vec(parse_list(o.hi));
  if (lo.size() != k || hi.size() != k) throw Error(ErrorKind::BadSpec, "--lo/--hi need one value per variable");
  const Parallelogram omega = Parallelogram::box(lo, hi);
  const int m = o.m > 0 ? o.m : k + phi.l() - 1;
  const Sense s = sense_from_name(o.sense);
  FlatOptions fo;
  fo.seed = o.seed;
  FlatnessWitness w;
  switch (s) {
    case Sense::Graph: w = flat_graph(phi, omega, m, fo); break;
    case Sense::F1: w = flat_f1(phi, omega, m, fo); break;
    case Sense::F2: w = flat_f2(phi, omega, m, fo); break;
    case Sense::F3: w = flat_f3(phi, omega, m, fo); break;
  }
  json body = {{"surface", o.surface}, {"region", to_json(omega)}, {"witness", to_json(w)}};
  std::string failing;
  if (delta_given) {
    body["delta"] = o.delta;
    body["flat"] = w.bound <= o.delta;
    if (w.bound > o.delta) failing = "flatness";
  }
  emit(o, "witness.json", make_artifact("flatcheck", body));
  std::cout << sense_name(s) << " bound " << w.bound << " (certified " << w.certified << ")\n";
  return finish_audit(o, failing);
}

int cmd_degdet(const Options& o) {
  const PolyMap phi = parse_polymap(o.surface, o.k);
  const DegDet H = det_for(o, phi);
  const PolyScalar h = apply_det(H, phi);
  const json body = {{"surface", o.surface},
                     {"det", H.kind == DetKind::HessianDet ? "hessian" : "wronskian"},
                     {"m", H.m},
                     {"value", format_poly(h)},
                     {"coeffs", to_json(h.coeffs())},
                     {"k", h.k()},
                     {"d", h.d()},
                     {"sup", grid_sup(h)},
                     {"lipschitz", lipschitz_constant(H, phi)}};
  emit(o, "degdet.json", make_artifact("degdet", body));
  std::cout << format_poly(h) << "\n";
  return 0;
}

int cmd_project(const Options& o) {
  const PolyMap phi = parse_polymap(o.surface, o.k);
  const DegDet H = det_for(o, phi);
  ProjectOptions po;
  po.seed = o.seed;
  const DegCert c = degenerate_project(phi, H, o.sigma, po);
  emit(o, "degcert.json", make_artifact("degcert", {{"surface", o.surface}, {"cert", to_json(c)}}));
  std::cout << "psi = ";
  for (int i = 0; i < c.psi.l(); ++i) std::cout << (i ? ", " : "") << format_poly(c.psi[i]);
  std::cout << "  err " << c.err << "  |H psi| " << c.h_residual << "\n";
  return 0;
}

int cmd_estimate(const Options& o) {
  const PolyMap phi = parse_polymap(o.surface, 1);
  if (phi.k() != 1) throw Error(ErrorKind::BadSpec, "estimate needs a curve in one variable");
  if (o.trials < 0) throw Error(ErrorKind::BadSpec, "--trials must be >= 0");
  if (!(o.cover_exponent > 0)) throw Error(ErrorKind::BadSpec, "--cover-exponent must be positive");
  const std::vector<double> ds = o.deltas.empty() ? std::vector<double>{o.delta} : parse_list(o.deltas);
  SweepResult s;
  s.p = o.p;
  s.q = o.q;
  s.alpha = o.alpha;
  s.seed = o.seed;
  for (double d : ds)
    s.rows.push_back(sweep_row(phi, interval_cover(std::pow(d, o.cover_exponent)), d, o.N, o.p, o.q, o.alpha,
                               o.trials, o.seed));
  bool fitted = true;
  try {
    fit_sweep(s);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InconclusiveFit) throw;
    fitted = false;
  }
  std::string failing;
  if (o.p == 2 && o.q == 2 && o.alpha == 0)
    for (const auto& r : s.rows)
      if (std::abs(r.ratio_max - 1) > 1e-9) failing = "parseval";
  emit(o, "estimate.json",
       make_artifact("estimate", {{"surface", o.surface},
                                  {"N", o.N},
                                  {"trials", o.trials},
                                  {"cover_exponent", o.cover_exponent},
                                  {"sweep", to_json(s)},
                                  {"fitted", fitted}}));
  write_text(path_in(o, "sweep.csv"), s.csv());
  std::cout << s.csv();
  if (fitted) std::cout << "slope " << s.slope << "\n";
  return finish_audit(o, failing);
}

int cmd_report(const Options& o) {
  std::vector<json> arts;
  for (const auto& p : o.inputs) arts.push_back(read_artifact(p));
  const ReportTables rt = build_report(arts);
  write_text(path_in(o, "report.tsv"), rt.tsv);
  write_text(path_in(o, "report.md"), rt.markdown);
  std::cout << rt.markdown;
  return 0;
}

int exit_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::BadSpec:
    case ErrorKind::BadParam:
    case ErrorKind::BadRegime:
    case ErrorKind::BadDimension:
    case ErrorKind::BadRegion:
    case ErrorKind::BadFactor:
    case ErrorKind::DimMismatch:
    case ErrorKind::UnsupportedFactor:
    case ErrorKind::NotMonotone:
    case ErrorKind::SchemaMismatch:
    case ErrorKind::NotInSublevel:
      std::cerr << "spec error: " << e.what() << "\n";
      return kExitSpec;
    case ErrorKind::Internal:
      std::cerr << "internal error: " << e.what() << "\n";
      return 1;
    default:
      std::cerr << "audit failed: " << e.what() << "\n";
      return kExitAudit;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flatcover: flat parallelogram covers, audits and decoupling estimates"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;

  app.add_option("--delta", o.delta, "scale delta")->capture_default_str();
  app.add_option("--epsilon", o.epsilon, "recursion exponent epsilon")->capture_default_str();
  app.add_option("--p", o.p, "Lebesgue exponent")->capture_default_str();
  app.add_option("--q", o.q, "aggregate exponent")->capture_default_str();
  app.add_option("--alpha", o.alpha, "cardinality exponent")->capture_default_str();
  app.add_option("--m", o.m, "flat dimension / Wronskian order (0: command default)");
  app.add_option("--seed", o.seed, "random seed")->capture_default_str();
  app.add_option("--trials", o.trials, "random draws per estimate")->capture_default_str();
  app.add_option("--out", o.out, "artifact directory")->capture_default_str();
  app.add_option("--audit", o.audit, "strict: audit failure exits 2; warn: report only")
      ->check(CLI::IsMember({"strict", "warn"}))
      ->capture_default_str();

  auto surface = [&](CLI::App* s, bool required) {
    auto* opt = s->add_option("--surface", o.surface, "polynomial, e.g. 'x^2+y^4', 't^2,t^3', 'x^2; y^4'");
    if (required) opt->required();
    s->add_option("--k", o.k, "number of variables (0: inferred)");
  };

  auto* part = app.add_subcommand("partition", "build and audit a flat cover");
  surface(part, true);
  part->add_option("--family", o.family, "bivariate|separable|curve|radial (default from the surface)");
  part->add_option("--n", o.n, "ambient dimension for the radial family")->capture_default_str();

  auto* fc = app.add_subcommand("flatcheck", "flatness witness on a box");
  surface(fc, true);
  fc->add_option("--lo", o.lo, "box corner, comma separated (default -1,...)");
  fc->add_option("--hi", o.hi, "box corner, comma separated (default 1,...)");
  fc->add_option("--sense", o.sense, "Graph|F1|F2|F3")->capture_default_str();

  auto* dd = app.add_subcommand("degdet", "degeneracy determinant of a surface or curve");
  surface(dd, true);
  dd->add_option("--det", o.det, "hessian|wronskian (default by dimension)");

  auto* pj = app.add_subcommand("project", "nearest totally degenerate approximation");
  surface(pj, true);
  pj->add_option("--det", o.det, "hessian|wronskian (default by dimension)");
  pj->add_option("--sigma", o.sigma, "sublevel threshold")->capture_default_str();

  auto* es = app.add_subcommand("estimate", "decoupling ratio lower bounds on a frequency torus");
  surface(es, true);
  es->add_option("--deltas", o.deltas, "comma separated deltas (default: --delta)");
  es->add_option("--N", o.N, "torus points per axis")->capture_default_str();
  es->add_option("--cover-exponent", o.cover_exponent, "cover intervals have length delta^e")->capture_default_str();

  auto* rp = app.add_subcommand("report", "consolidate artifacts into TSV and markdown tables");
  rp->add_option("inputs", o.inputs, "artifact JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitSpec;
  }

  try {
    const bool delta_given = app.count("--delta") > 0;
    if (part->parsed()) return cmd_partition(o);
    if (fc->parsed()) return cmd_flatcheck(o, delta_given);
    if (dd->parsed()) return cmd_degdet(o);
    if (pj->parsed()) return cmd_project(o);
    if (es->parsed()) return cmd_estimate(o);
    if (rp->parsed()) return cmd_report(o);
  } catch (const Error& e) {
    return exit_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return kExitSpec;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
