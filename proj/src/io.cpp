#include "flatcover/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace flatcover {

namespace {

// ---------------------------------------------------------------- parsing

struct Token {
  enum Kind { Num, Var, Op, End } kind;
  double value = 0;
  int var = 0;
  char op = 0;
  std::size_t pos = 0;
};

[[noreturn]] void spec_error(const std::string& text, std::size_t pos, const std::string& msg) {
  throw Error(ErrorKind::BadSpec, msg + " at column " + std::to_string(pos + 1) + " of '" + text + "'");
}

std::vector<Token> tokenize(const std::string& s, bool& lone) {
  std::vector<Token> out;
  bool named = false;
  lone = false;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(s.substr(i), &used);
      } catch (const std::exception&) {
        spec_error(s, i, "bad number");
      }
      out.push_back({Token::Num, v, 0, 0, i});
      i += used;
    } else if (std::string("xyzw").find(c) != std::string::npos) {
      int idx = static_cast<int>(std::string("xyzw").find(c));
      const std::size_t at = i++;
      if (c == 'x' && i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        idx = s[i] - '1';
        if (idx < 0) spec_error(s, i, "variable index starts at 1");
        ++i;
      }
      named = true;
      out.push_back({Token::Var, 0, idx, 0, at});
    } else if (c == 't' || c == 's' || c == 'r') {
      lone = true;
      out.push_back({Token::Var, 0, 0, 0, i++});
    } else if (std::string("+-*^()").find(c) != std::string::npos) {
      out.push_back({Token::Op, 0, 0, c, i++});
    } else {
      spec_error(s, i, std::string("unexpected '") + c + "'");
    }
  }
  if (named && lone) throw Error(ErrorKind::BadSpec, "t, s, r cannot be mixed with x, y, z, w in '" + s + "'");
  out.push_back({Token::End, 0, 0, 0, s.size()});
  return out;
}

class Parser {
 public:
  Parser(const std::string& text, std::vector<Token> toks, int k) : text_(text), t_(std::move(toks)), k_(k) {}

  PolyScalar parse() {
    PolyScalar p = expr();
    if (peek().kind != Token::End) spec_error(text_, peek().pos, "trailing input");
    return p;
  }

 private:
  const Token& peek() const { return t_[i_]; }
  bool is_op(char c) const { return peek().kind == Token::Op && peek().op == c; }

  PolyScalar expr() {
    PolyScalar acc = PolyScalar::constant(k_, 0, 0.0);
    bool first = true;
    while (true) {
      double sign = 1;
      if (is_op('+') || is_op('-')) {
        sign = is_op('-') ? -1 : 1;
        ++i_;
      } else if (!first) {
        break;
      }
      acc += term() * sign;
      first = false;
    }
    return acc;
  }

  PolyScalar term() {
    PolyScalar acc = factor();
    while (true) {
      if (is_op('*')) {
        ++i_;
        acc = acc * factor();
      } else if (peek().kind == Token::Var || peek().kind == Token::Num || is_op('(')) {
        acc = acc * factor();
      } else {
        return acc;
      }
    }
  }

  PolyScalar factor() {
    PolyScalar base = primary();
    if (!is_op('^')) return base;
    ++i_;
    const Token& e = peek();
    if (e.kind != Token::Num || e.value != std::floor(e.value) || e.value < 0 || e.value > 64)
      spec_error(text_, e.pos, "exponent must be an integer in [0, 64]");
    ++i_;
    PolyScalar r = PolyScalar::constant(k_, 0, 1.0);
    for (int j = 0; j < static_cast<int>(e.value); ++j) r = r * base;
    return r;
  }

  PolyScalar primary() {
    const Token tok = peek();
    switch (tok.kind) {
      case Token::Num: ++i_; return PolyScalar::constant(k_, 0, tok.value);
      case Token::Var: ++i_; return PolyScalar::variable(k_, 1, tok.var);
      case Token::Op:
        if (tok.op == '(') {
          ++i_;
          PolyScalar p = expr();
          if (!is_op(')')) spec_error(text_, peek().pos, "missing ')'");
          ++i_;
          return p;
        }
        if (tok.op == '-') {
          ++i_;
          return factor() * -1.0;
        }
        spec_error(text_, tok.pos, std::string("unexpected '") + tok.op + "'");
      case Token::End: break;
    }
    spec_error(text_, tok.pos, "unexpected end");
  }

  const std::string& text_;
  std::vector<Token> t_;
  std::size_t i_ = 0;
  int k_;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

PolyScalar parse_with(const std::string& text, int k) {
  bool lone = false;
  std::vector<Token> toks = tokenize(text, lone);
  if (toks.size() == 1) throw Error(ErrorKind::BadSpec, "empty polynomial");
  for (const Token& t : toks)
    if (t.kind == Token::Var && t.var >= k)
      throw Error(ErrorKind::BadSpec, "variable index " + std::to_string(t.var + 1) + " exceeds dimension " +
                                          std::to_string(k) + " in '" + text + "'");
  return Parser(text, std::move(toks), k).parse();
}

int inferred_dim(const std::string& text) {
  bool lone = false;
  int k = 1;
  for (const Token& t : tokenize(text, lone))
    if (t.kind == Token::Var) k = std::max(k, t.var + 1);
  return k;
}

PolyScalar trimmed(const PolyScalar& p) { return p.with_degree(std::max(1, p.true_degree())); }

std::string var_name(int k, int i) {
  if (k <= 4) return std::string(1, "xyzw"[i]);
  return "x" + std::to_string(i + 1);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------- json helpers

json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double num_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
  }
  throw Error(ErrorKind::BadSpec, "expected a number, got " + j.dump());
}

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorKind::BadSpec, std::string("missing field '") + key + "'");
  return j.at(key);
}

const char* form_name(FactorForm f) {
  switch (f) {
    case FactorForm::PowerOfDelta: return "power_of_delta";
    case FactorForm::LogCount: return "log_count";
    case FactorForm::Constant: return "constant";
  }
  return "?";
}

FactorForm form_from(const std::string& s) {
  for (FactorForm f : {FactorForm::PowerOfDelta, FactorForm::LogCount, FactorForm::Constant})
    if (s == form_name(f)) return f;
  throw Error(ErrorKind::BadSpec, "unknown cost factor form '" + s + "'");
}

json polymap_json(const PolyMap& p) {
  json comps = json::array();
  for (const auto& c : p.components()) comps.push_back({{"text", format_poly(c)}, {"coeffs", to_json(c.coeffs())}});
  return {{"k", p.k()}, {"d", p.d()}, {"components", comps}};
}

// Least squares slope of log y on log(1/x).
double loglog_slope(const std::vector<std::pair<double, double>>& xy) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(xy.size());
  for (const auto& [x, y] : xy) {
    const double a = std::log(1 / x), b = std::log(y);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace

PolyScalar parse_poly(const std::string& text, int k) {
  if (k < 0) throw Error(ErrorKind::BadSpec, "negative dimension");
  return trimmed(parse_with(text, k > 0 ? k : inferred_dim(text)));
}

PolyMap parse_polymap(const std::string& text, int k) {
  const std::vector<std::string> parts = split(text, ',');
  if (parts.empty()) throw Error(ErrorKind::BadSpec, "empty polynomial map");
  if (k == 0)
    for (const auto& s : parts) k = std::max(k, inferred_dim(s));
  std::vector<PolyScalar> comps;
  int d = 1;
  for (const auto& s : parts) {
    comps.push_back(parse_with(s, k));
    d = std::max(d, comps.back().true_degree());
  }
  for (auto& c : comps) c = c.with_degree(d);
  return PolyMap(std::move(comps));
}

std::string format_poly(const PolyScalar& p) {
  const auto& mons = monomials(p.k(), p.d());
  std::string out;
  std::vector<int> order(mons.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  // highest degree first
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    int da = 0, db = 0;
    for (int v : mons[a]) da += v;
    for (int v : mons[b]) db += v;
    return da > db;
  });
  for (int i : order) {
    const double c = p.coeffs()(i);
    if (c == 0) continue;
    std::string mon;
    for (int v = 0; v < p.k(); ++v) {
      if (mons[i][v] == 0) continue;
      if (!mon.empty()) mon += "*";
      mon += var_name(p.k(), v);
      if (mons[i][v] > 1) mon += "^" + std::to_string(mons[i][v]);
    }
    const double a = std::abs(c);
    std::string term = mon.empty() ? fmt(a) : (a == 1 ? mon : fmt(a) + "*" + mon);
    if (out.empty())
      out = c < 0 ? "-" + term : term;
    else
      out += (c < 0 ? " - " : " + ") + term;
  }
  return out.empty() ? "0" : out;
}

json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vec(m.row(i).transpose())));
  return a;
}

json to_json(const AffineMap& a) { return {{"matrix", to_json(a.matrix)}, {"offset", to_json(a.offset)}}; }

json to_json(const Parallelogram& p) {
  // dirs as a list of direction vectors (the columns)
  return {{"center", to_json(p.center)}, {"dirs", to_json(Mat(p.dirs.transpose()))},
          {"half_lengths", to_json(p.half_lengths)}};
}

json to_json(const FlatnessWitness& w) {
  return {{"sense", sense_name(w.sense)},
          {"m", w.m},
          {"Uprime", to_json(w.Uprime)},
          {"L", w.L ? to_json(*w.L) : json(nullptr)},
          {"bound", num(w.bound)},
          {"certified", num(w.certified)}};
}

json to_json(const RescaleRecord& r) {
  return {{"Xi", to_json(r.Xi)}, {"U", to_json(r.U)},         {"A", to_json(r.A)},
          {"b", to_json(r.b)},   {"sigma", to_json(r.sigma)}, {"parent", r.parent}};
}

json to_json(const OverlapProfile& o) {
  json mus = json::array(), counts = json::array(), open = json::array();
  for (double v : o.mus) mus.push_back(num(v));
  for (double v : o.counts) counts.push_back(num(v));
  for (double v : o.open_counts) open.push_back(num(v));
  return {{"mus", mus}, {"counts", counts}, {"open_counts", open}};
}

json to_json(const CostLedger& l) {
  json f = json::array();
  for (const auto& c : l.factors) f.push_back({{"source", c.source}, {"form", form_name(c.form)}, {"value", num(c.value)}});
  return {{"factors", f}, {"fitted_exponent", num(l.fitted_exponent)}};
}

json to_json(const PartitionStats& s) {
  return {{"cardinality", s.cardinality}, {"min_dimension", num(s.min_dimension)}, {"depth", s.depth},
          {"rounds", s.rounds},           {"tasks", s.tasks},                      {"fallbacks", s.fallbacks},
          {"beta", num(s.beta)}};
}

json to_json(const PartitionAudit& a) {
  return {{"probes", a.probes},
          {"uncovered", a.uncovered},
          {"contained", a.contained},
          {"min_dimension", num(a.min_dimension)},
          {"max_flat_ratio", num(a.max_flat_ratio)},
          {"dimension_ok", a.dimension_ok},
          {"flatness_ok", a.flatness_ok},
          {"failing", a.failing},
          {"ok", a.ok()}};
}

json to_json(const PartitionConfig& c) {
  return {{"delta", num(c.delta)}, {"epsilon", num(c.epsilon)}, {"m", c.m},
          {"p", num(c.p)},         {"q", num(c.q)},             {"alpha", num(c.alpha)},
          {"family", family_name(c.family)}, {"beta", num(c.beta)}, {"max_rounds", c.max_rounds},
          {"seed", c.seed}};
}

json to_json(const PartitionOutput& out) {
  json cells = json::array(), records = json::array();
  for (const auto& c : out.cells)
    cells.push_back(
        {{"region", to_json(c.region)}, {"witness", to_json(c.witness)}, {"lineage", c.lineage}, {"round", c.round}});
  for (const auto& r : out.records) records.push_back(to_json(r));
  return {{"k", out.k},
          {"delta", num(out.delta)},
          {"cells", cells},
          {"records", records},
          {"overlap", to_json(out.overlap)},
          {"ledger", to_json(out.ledger)},
          {"stats", to_json(out.stats)}};
}

json to_json(const DegCert& c) {
  return {{"sigma", num(c.sigma)},       {"psi", polymap_json(c.psi)},       {"err", num(c.err)},
          {"Cprime", num(c.Cprime)},     {"beta_emp", num(c.beta_emp)},      {"h_residual", num(c.h_residual)}};
}

json to_json(const DecEstimate& e) {
  json r = json::array();
  for (double v : e.ratios) r.push_back(num(v));
  return {{"ratio_max", num(e.ratio_max)}, {"argmax", e.argmax}, {"trials", e.trials}, {"seed", e.seed},
          {"p", num(e.p)}, {"q", num(e.q)}, {"alpha", num(e.alpha)}, {"ratios", r}};
}

json to_json(const SweepResult& s) {
  json rows = json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"delta", num(r.delta)},
                    {"ratio_max", num(r.ratio_max)},
                    {"tiles", r.tiles},
                    {"dropped", r.dropped},
                    {"argmax", r.argmax}});
  return {{"rows", rows}, {"slope", num(s.slope)}, {"intercept", num(s.intercept)}, {"p", num(s.p)},
          {"q", num(s.q)}, {"alpha", num(s.alpha)}, {"seed", s.seed}};
}

Vec vec_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::BadSpec, "expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num_from(j[i]);
  return v;
}

Mat mat_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::BadSpec, "expected an array of rows");
  if (j.empty()) return Mat(0, 0);
  const std::size_t cols = j[0].size();
  Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != cols) throw Error(ErrorKind::BadSpec, "ragged matrix");
    m.row(static_cast<Eigen::Index>(i)) = vec_from_json(j[i]).transpose();
  }
  return m;
}

AffineMap affine_from_json(const json& j) {
  return AffineMap(mat_from_json(field(j, "matrix")), vec_from_json(field(j, "offset")));
}

Parallelogram pgram_from_json(const json& j) {
  return Parallelogram(vec_from_json(field(j, "center")), Mat(mat_from_json(field(j, "dirs")).transpose()),
                       vec_from_json(field(j, "half_lengths")));
}

FlatnessWitness witness_from_json(const json& j) {
  FlatnessWitness w;
  w.sense = sense_from_name(field(j, "sense").get<std::string>());
  w.m = field(j, "m").get<int>();
  w.Uprime = mat_from_json(field(j, "Uprime"));
  if (!field(j, "L").is_null()) w.L = affine_from_json(j.at("L"));
  w.bound = num_from(field(j, "bound"));
  w.certified = num_from(field(j, "certified"));
  return w;
}

RescaleRecord record_from_json(const json& j) {
  RescaleRecord r;
  r.Xi = affine_from_json(field(j, "Xi"));
  r.U = mat_from_json(field(j, "U"));
  r.A = mat_from_json(field(j, "A"));
  r.b = vec_from_json(field(j, "b"));
  r.sigma = vec_from_json(field(j, "sigma"));
  r.parent = field(j, "parent").get<int>();
  return r;
}

CostLedger ledger_from_json(const json& j) {
  CostLedger l;
  for (const auto& f : field(j, "factors"))
    l.factors.push_back(
        {field(f, "source").get<std::string>(), form_from(field(f, "form").get<std::string>()), num_from(f.at("value"))});
  l.fitted_exponent = num_from(field(j, "fitted_exponent"));
  return l;
}

OverlapProfile overlap_from_json(const json& j) {
  OverlapProfile o;
  for (const auto& v : field(j, "mus")) o.mus.push_back(num_from(v));
  for (const auto& v : field(j, "counts")) o.counts.push_back(num_from(v));
  for (const auto& v : field(j, "open_counts")) o.open_counts.push_back(num_from(v));
  return o;
}

PartitionOutput partition_from_json(const json& j) {
  PartitionOutput out;
  out.k = field(j, "k").get<int>();
  out.delta = num_from(field(j, "delta"));
  for (const auto& c : field(j, "cells")) {
    Cell cell;
    cell.region = pgram_from_json(field(c, "region"));
    cell.witness = witness_from_json(field(c, "witness"));
    cell.lineage = field(c, "lineage").get<std::vector<int>>();
    cell.round = field(c, "round").get<int>();
    out.cells.push_back(std::move(cell));
  }
  for (const auto& r : field(j, "records")) out.records.push_back(record_from_json(r));
  for (const auto& c : out.cells)
    for (int idx : c.lineage)
      if (idx < 0 || idx >= static_cast<int>(out.records.size()))
        throw Error(ErrorKind::BadSpec, "lineage index " + std::to_string(idx) + " out of range");
  out.overlap = overlap_from_json(field(j, "overlap"));
  out.ledger = ledger_from_json(field(j, "ledger"));
  const json& s = field(j, "stats");
  out.stats.cardinality = field(s, "cardinality").get<long>();
  out.stats.min_dimension = num_from(field(s, "min_dimension"));
  out.stats.depth = field(s, "depth").get<int>();
  out.stats.rounds = field(s, "rounds").get<int>();
  out.stats.tasks = field(s, "tasks").get<long>();
  out.stats.fallbacks = field(s, "fallbacks").get<int>();
  out.stats.beta = num_from(field(s, "beta"));
  return out;
}

json make_artifact(const std::string& kind, json body) {
  body["version"] = kSchemaVersion;
  body["kind"] = kind;
  return body;
}

void check_version(const json& j) {
  if (!j.is_object() || !j.contains("version") || !j["version"].is_string())
    throw Error(ErrorKind::SchemaMismatch, "artifact has no version field");
  const std::string v = j["version"].get<std::string>();
  if (v != kSchemaVersion) throw Error(ErrorKind::SchemaMismatch, "artifact version '" + v + "', expected '" + kSchemaVersion + "'");
}

std::string dump_artifact(const json& j) { return j.dump(2) + "\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::BadSpec, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorKind::BadSpec, "write failed for " + path);
}

json read_artifact(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::BadSpec, "cannot read " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadSpec, path + ": " + e.what());
  }
}

std::string cells_tsv(const PartitionOutput& out) {
  std::ostringstream s;
  s << "# cell\tround\tbound";
  for (int i = 0; i < out.k; ++i) s << "\tc" << i;
  for (int i = 0; i < out.k; ++i) s << "\th" << i;
  for (int i = 0; i < out.k; ++i)
    for (int r = 0; r < out.k; ++r) s << "\td" << i << "_" << r;
  s << "\n";
  for (std::size_t n = 0; n < out.cells.size(); ++n) {
    const auto& c = out.cells[n];
    s << n << "\t" << c.round << "\t" << fmt(c.witness.bound);
    for (int i = 0; i < out.k; ++i) s << "\t" << fmt(c.region.center(i));
    for (int i = 0; i < out.k; ++i) s << "\t" << fmt(c.region.half_lengths(i));
    for (int i = 0; i < out.k; ++i)
      for (int r = 0; r < out.k; ++r) s << "\t" << fmt(c.region.dirs(r, i));
    s << "\n";
  }
  return s.str();
}

ReportTables build_report(const std::vector<json>& artifacts) {
  for (const auto& a : artifacts) check_version(a);

  struct Row {
    double delta;
    long cells;
    double overlap;
    double min_dim;
    double flat_ratio;
    double exponent;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Row>> parts;  // (family, surface)
  struct EstRow {
    std::string surface;
    double delta, ratio, p, q, alpha, slope;
    int tiles;
    bool fitted;
  };
  std::vector<EstRow> ests;
  ReportTables rt;

  for (const auto& a : artifacts) {
    const std::string kind = field(a, "kind").get<std::string>();
    if (kind == "partition") {
      const json& o = field(a, "output");
      const OverlapProfile ov = overlap_from_json(field(o, "overlap"));
      const json& au = field(a, "audit");
      parts[{field(a, "family").get<std::string>(), field(a, "surface").get<std::string>()}].push_back(
          {num_from(field(o, "delta")), field(field(o, "stats"), "cardinality").get<long>(),
           ov.mus.empty() ? NAN : ov.at(1.0), num_from(field(au, "min_dimension")),
           num_from(field(au, "max_flat_ratio")), num_from(field(field(o, "ledger"), "fitted_exponent"))});
      ++rt.partitions;
    } else if (kind == "estimate") {
      const json& s = field(a, "sweep");
      const bool fitted = field(a, "fitted").get<bool>();
      for (const auto& r : field(s, "rows"))
        ests.push_back({field(a, "surface").get<std::string>(), num_from(field(r, "delta")),
                        num_from(field(r, "ratio_max")), num_from(field(s, "p")), num_from(field(s, "q")),
                        num_from(field(s, "alpha")), fitted ? num_from(field(s, "slope")) : NAN,
                        field(r, "tiles").get<int>(), fitted});
      ++rt.estimates;
    }
  }

  auto cell = [](double v) { return std::isnan(v) ? std::string("-") : fmt6(v); };
  std::ostringstream tsv, md;

  tsv << "# partitions\n# family\tsurface\tdelta\tcells\toverlap_mu1\tmin_dimension\tmax_flat_ratio\tledger_exponent"
         "\tcardinality_slope\n";
  md << "## Partitions\n\n| family | surface | delta | cells | overlap (mu=1) | min dimension | max flat ratio | "
        "ledger exponent | cardinality slope |\n|---|---|---|---|---|---|---|---|---|\n";
  struct FamilyConst {
    double flat_ratio = 0, overlap = 0, spread = 0, slope = NAN;
  };
  std::map<std::string, FamilyConst> fam;
  for (auto& [key, rows] : parts) {
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.delta > b.delta; });
    std::vector<std::pair<double, double>> xy;
    double omin = INFINITY, omax = -INFINITY;
    for (const auto& r : rows) {
      if (xy.empty() || xy.back().first != r.delta) xy.push_back({r.delta, static_cast<double>(r.cells)});
      if (!std::isnan(r.overlap)) {
        omin = std::min(omin, r.overlap);
        omax = std::max(omax, r.overlap);
      }
    }
    const double slope = xy.size() >= 2 ? loglog_slope(xy) : NAN;
    FamilyConst& fc = fam[key.first];
    for (const auto& r : rows) {
      fc.flat_ratio = std::max(fc.flat_ratio, r.flat_ratio);
      if (!std::isnan(r.overlap)) fc.overlap = std::max(fc.overlap, r.overlap);
      const std::string line[] = {key.first,        key.second,       cell(r.delta),      std::to_string(r.cells),
                                  cell(r.overlap),  cell(r.min_dim),  cell(r.flat_ratio), cell(r.exponent),
                                  cell(slope)};
      for (int i = 0; i < 9; ++i) tsv << (i ? "\t" : "") << line[i];
      tsv << "\n";
      md << "|";
      for (const auto& c : line) md << " " << c << " |";
      md << "\n";
    }
    if (omax >= omin) fc.spread = std::max(fc.spread, omax - omin);
    if (!std::isnan(slope)) fc.slope = std::isnan(fc.slope) ? slope : std::max(fc.slope, slope);
  }

  tsv << "\n\n# families\n# family\tmax_flat_ratio\tmax_overlap_mu1\toverlap_spread\tmax_cardinality_slope\n";
  md << "\n## Family constants\n\n| family | max flat ratio | max overlap (mu=1) | overlap spread | max cardinality "
        "slope |\n|---|---|---|---|---|\n";
  for (const auto& [name, fc] : fam) {
    tsv << name << "\t" << cell(fc.flat_ratio) << "\t" << cell(fc.overlap) << "\t" << cell(fc.spread) << "\t"
        << cell(fc.slope) << "\n";
    md << "| " << name << " | " << cell(fc.flat_ratio) << " | " << cell(fc.overlap) << " | " << cell(fc.spread)
       << " | " << cell(fc.slope) << " |\n";
  }

  tsv << "\n\n# estimates\n# surface\tdelta\tratio_max\ttiles\tp\tq\talpha\tslope\n";
  md << "\n## Estimates\n\n| surface | delta | ratio max | tiles | p | q | alpha | slope |\n"
        "|---|---|---|---|---|---|---|---|\n";
  for (const auto& e : ests) {
    const std::string line[] = {e.surface, cell(e.delta), cell(e.ratio), std::to_string(e.tiles),
                                cell(e.p), cell(e.q),     cell(e.alpha), cell(e.slope)};
    for (int i = 0; i < 8; ++i) tsv << (i ? "\t" : "") << line[i];
    tsv << "\n";
    md << "|";
    for (const auto& c : line) md << " " << c << " |";
    md << "\n";
  }

  rt.tsv = tsv.str();
  rt.markdown = md.str();
  return rt;
}

}  // namespace flatcover
