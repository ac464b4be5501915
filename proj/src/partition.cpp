#include "flatcover/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "flatcover/parallel.hpp"

namespace flatcover {

const char* family_name(Family f) {
  switch (f) {
    case Family::BivariatePoly: return "bivariate";
    case Family::SeparableSum: return "separable";
    case Family::PolyCurve: return "curve";
    case Family::RadialSurface: return "radial";
  }
  return "?";
}

Family family_from_name(const std::string& s) {
  for (Family f : {Family::BivariatePoly, Family::SeparableSum, Family::PolyCurve, Family::RadialSurface})
    if (s == family_name(f)) return f;
  throw Error(ErrorKind::BadSpec, "unknown family '" + s + "'");
}

void PartitionConfig::validate() const {
  if (!(delta > 0 && delta < 1)) throw Error(ErrorKind::BadSpec, "delta must lie in (0,1)");
  if (!(epsilon >= std::ldexp(1.0, -7) && epsilon <= 0.1)) throw Error(ErrorKind::BadSpec, "epsilon must lie in [2^-7, 0.1]");
  if (!(p >= 2 && q >= 2)) throw Error(ErrorKind::BadSpec, "p and q must be >= 2");
  if (m < 1) throw Error(ErrorKind::BadSpec, "flat dimension must be >= 1");
  if (beta > 1) throw Error(ErrorKind::BadSpec, "beta must lie in (0,1]");
}

double reconstruction_residual(const RescaleRecord& r, const PolyMap& parent, const PolyMap& child, int samples,
                               std::uint64_t seed) {
  const int k = child.k();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    Vec x(k);
    for (int i = 0; i < k; ++i) x(i) = u(rng);
    const Vec pv = parent.eval(r.Xi(x));
    const Vec lhs = r.sigma.cwiseProduct(child.eval(x));
    const Vec rhs = r.U * (pv + r.A * x + r.b);
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff() / std::max(1.0, pv.cwiseAbs().maxCoeff()));
  }
  return worst;
}

// ---- ledgers

void CostLedger::append(const CostFactor& f) {
  factors.push_back(f);
  if (f.form == FactorForm::PowerOfDelta) fitted_exponent += f.value;
}

double CostLedger::log2_total(double delta) const {
  double t = 0;
  for (const auto& f : factors) {
    switch (f.form) {
      case FactorForm::PowerOfDelta: t += f.value * std::log2(1.0 / delta); break;
      case FactorForm::LogCount: t += std::log2(std::max(1.0, std::log2(f.value))); break;
      case FactorForm::Constant: t += std::log2(f.value); break;
    }
  }
  return t;
}

CostLedger cost_combine(CostLedger ledger, const CostFactor& outer, const CostFactor& inner_sup, long count, double,
                        double q, double alpha) {
  if (count < 1) throw Error(ErrorKind::BadParam, "cost_combine needs count >= 1");
  ledger.append(outer);
  ledger.append(inner_sup);
  ledger.append({"combine", FactorForm::Constant, std::exp2(alpha + 0.5 - 1.0 / q)});
  ledger.append({"combine", FactorForm::LogCount, double(count)});
  return ledger;
}

BootstrapCost bootstrap_cost(double, double epsilon, double beta) {
  if (!(epsilon > 0 && epsilon <= 1 && beta > 0 && beta <= 1))
    throw Error(ErrorKind::BadParam, "bootstrap_cost needs epsilon, beta in (0,1]");
  const int N = static_cast<int>(std::ceil(1.0 / (beta * epsilon) - 1e-9));
  return {N, epsilon + N * epsilon * epsilon};
}

std::vector<Parallelogram> PartitionOutput::regions() const {
  std::vector<Parallelogram> r;
  r.reserve(cells.size());
  for (const auto& c : cells) r.push_back(c.region);
  return r;
}

// ---- boxes

AffineMap Box::to_affine() const { return AffineMap(Mat((0.5 * (hi - lo)).asDiagonal()), 0.5 * (lo + hi)); }

namespace {

Box unit_box(int k) { return {Vec::Constant(k, -1.0), Vec::Constant(k, 1.0)}; }

std::vector<Box> grid_boxes(const Box& dom, const std::vector<int>& n) {
  const int k = static_cast<int>(dom.lo.size());
  std::vector<Box> out;
  std::vector<int> idx(k, 0);
  while (true) {
    Box b{Vec(k), Vec(k)};
    for (int i = 0; i < k; ++i) {
      const double w = dom.hi(i) - dom.lo(i);
      b.lo(i) = dom.lo(i) + w * idx[i] / n[i];
      b.hi(i) = idx[i] + 1 == n[i] ? dom.hi(i) : dom.lo(i) + w * (idx[i] + 1) / n[i];
    }
    out.push_back(b);
    int i = 0;
    while (i < k && ++idx[i] == n[i]) idx[i++] = 0;
    if (i == k) break;
  }
  return out;
}

std::vector<Box> grid_boxes(const Box& dom, int n) {
  return grid_boxes(dom, std::vector<int>(dom.lo.size(), n));
}

std::vector<Box> split_box(const Box& b) {
  const int k = static_cast<int>(b.lo.size());
  std::vector<Box> out;
  const Vec mid = 0.5 * (b.lo + b.hi);
  for (int mask = 0; mask < (1 << k); ++mask) {
    Box c{b.lo, b.hi};
    for (int i = 0; i < k; ++i) (mask >> i & 1 ? c.lo(i) : c.hi(i)) = mid(i);
    out.push_back(c);
  }
  return out;
}

struct BoxSplit {
  std::vector<Box> kept, dropped;
};

// Keeps boxes with certified sup |H| <= upper, drops boxes with certified inf |H| > lower, splits the rest.
// A box is not split when a child would be thinner than `floor` after scaling axis i by scale(i);
// such boxes are kept.
BoxSplit refine_boxes(const PolyScalar& H, const Box& dom, const std::vector<int>& n0, double upper, double lower,
                      const Vec& scale, double floor) {
  BoxSplit out;
  std::vector<std::pair<Box, int>> stack;
  auto start = grid_boxes(dom, n0);
  for (auto it = start.rbegin(); it != start.rend(); ++it) stack.push_back({*it, 0});
  while (!stack.empty()) {
    auto [b, depth] = stack.back();
    stack.pop_back();
    const PolyScalar Q = compose_affine(H, b.to_affine());
    const double S = Q.sum_abs_coeff(), c0 = std::abs(Q.coeffs()(0));
    if (S <= upper) {
      out.kept.push_back(b);
    } else if (c0 - (S - c0) > lower) {
      out.dropped.push_back(b);
    } else if (floor > 0 && (0.5 * (b.hi - b.lo).cwiseProduct(scale)).minCoeff() < floor) {
      out.kept.push_back(b);
    } else {
      if (depth + 1 > 40) throw Error(ErrorKind::DepthExceeded, "sublevel refinement exceeded depth 40");
      auto ch = split_box(b);
      for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back({*it, depth + 1});
    }
  }
  return out;
}

long long qkey(double x) { return std::llround(x * 1e9); }

PolyScalar affine_part(const PolyScalar& P) {
  PolyScalar a(P.k(), P.d());
  for (int i = 0; i <= P.k() && i < P.coeffs().size(); ++i) a.coeffs()(i) = P.coeffs()(i);
  return a;
}

PolyScalar strip_affine(const PolyScalar& P) { return P - affine_part(P); }

double f1_cube(const PolyScalar& P, int per_axis = 9) {
  if (P.true_degree() <= 1) return 0.0;
  return f1_scalar(P, Parallelogram::cube(P.k()), per_axis);
}

}  // namespace

std::vector<Box> merge_boxes(std::vector<Box> boxes) {
  if (boxes.empty()) return boxes;
  const int k = static_cast<int>(boxes[0].lo.size());
  bool changed = true;
  while (changed) {
    changed = false;
    for (int a = 0; a < k; ++a) {
      auto key = [&](const Box& b) {
        std::vector<long long> v;
        for (int i = 0; i < k; ++i)
          if (i != a) {
            v.push_back(qkey(b.lo(i)));
            v.push_back(qkey(b.hi(i)));
          }
        v.push_back(qkey(b.lo(a)));
        return v;
      };
      std::vector<std::pair<std::vector<long long>, int>> order;
      for (int i = 0; i < static_cast<int>(boxes.size()); ++i) order.push_back({key(boxes[i]), i});
      std::sort(order.begin(), order.end());
      std::vector<Box> merged;
      for (std::size_t j = 0; j < order.size(); ++j) {
        Box cur = boxes[order[j].second];
        while (j + 1 < order.size()) {
          const auto& nk = order[j + 1].first;
          const auto& ck = order[j].first;
          if (!std::equal(ck.begin(), ck.end() - 1, nk.begin())) break;
          const Box& nb = boxes[order[j + 1].second];
          if (qkey(cur.hi(a)) != qkey(nb.lo(a))) break;
          cur.hi(a) = nb.hi(a);
          ++j;
          changed = true;
        }
        merged.push_back(cur);
      }
      boxes = std::move(merged);
    }
  }
  std::sort(boxes.begin(), boxes.end(), [&](const Box& x, const Box& y) {
    for (int i = k - 1; i >= 0; --i)
      if (x.lo(i) != y.lo(i)) return x.lo(i) < y.lo(i);
    return false;
  });
  return boxes;
}

// ---- sublevel covers

std::vector<Interval> sublevel_cover_1d(const PolyScalar& H, double sigma) {
  if (H.k() != 1) throw Error(ErrorKind::BadDimension, "sublevel_cover_1d needs a univariate H");
  const int deg = H.true_degree();
  if (deg <= 0) {
    const double c = deg < 0 ? 0.0 : H.coeffs()(0);
    if (std::abs(c) <= sigma) return {{-1.0, 1.0}};
    return {};
  }
  std::vector<double> cuts{-1.0, 1.0};
  for (double s : {sigma, -sigma}) {
    Vec c = H.coeffs().head(deg + 1);
    c(0) -= s;
    // Companion matrix of the monic polynomial.
    Mat C = Mat::Zero(deg, deg);
    for (int i = 0; i < deg; ++i) C(0, i) = -c(deg - 1 - i) / c(deg);
    for (int i = 1; i < deg; ++i) C(i, i - 1) = 1.0;
    Eigen::EigenSolver<Mat> es(C, false);
    for (int i = 0; i < deg; ++i) {
      auto z = es.eigenvalues()(i);
      if (std::abs(z.imag()) > 1e-7 * std::max(1.0, std::abs(z))) continue;
      double x = z.real();
      for (int it = 0; it < 4; ++it) {
        double f = 0, g = 0;
        for (int j = deg; j >= 0; --j) {
          g = g * x + f;
          f = f * x + c(j);
        }
        if (g == 0) break;
        x -= f / g;
      }
      if (x > -1 && x < 1) cuts.push_back(x);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<Interval> out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    if (b - a <= 0) continue;
    Vec mid(1);
    mid << 0.5 * (a + b);
    if (std::abs(H.eval(mid)) > sigma) continue;
    if (!out.empty() && out.back().hi >= a - 1e-14)
      out.back().hi = b;
    else
      out.push_back({a, b});
  }
  // Isolated touching points.
  for (double x : cuts) {
    Vec v(1);
    v << x;
    if (std::abs(H.eval(v)) > sigma * (1 + 1e-12)) continue;
    bool inside = false;
    for (const auto& I : out) inside = inside || (x >= I.lo - 1e-14 && x <= I.hi + 1e-14);
    if (!inside) out.push_back({x, x});
  }
  std::sort(out.begin(), out.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  return out;
}

std::vector<Parallelogram> sublevel_cover_2d(const PolyScalar& H, double sigma, double epsilon) {
  if (H.k() != 2) throw Error(ErrorKind::BadDimension, "sublevel_cover_2d needs a bivariate H");
  if (!(sigma > 0)) throw Error(ErrorKind::BadParam, "sublevel level must be positive");
  const int n0 = std::max(1, static_cast<int>(std::ceil(std::pow(sigma, -epsilon) - 1e-12)));
  auto split = refine_boxes(H, unit_box(2), {n0, n0}, 2 * sigma, sigma, Vec::Ones(2), 0.0);
  std::vector<Parallelogram> out;
  for (const Box& b : merge_boxes(std::move(split.kept))) out.push_back(b.pgram());
  return out;
}

// ---- curves

std::vector<Interval> curve_flat_partition(const PolyMap& phi, double delta, int m, double lo, double hi) {
  if (phi.k() != 1) throw Error(ErrorKind::BadDimension, "curve_flat_partition needs k = 1");
  if (!(hi > lo)) throw Error(ErrorKind::BadRegion, "empty interval");
  const bool scalar = phi.l() == 1 && m == 1;
  FlatOptions fo;
  fo.per_axis = 17;
  fo.restarts = 2;
  fo.steps = 20;
  auto flat = [&](double a, double b) {
    const Parallelogram I = Parallelogram::box(Vec::Constant(1, a), Vec::Constant(1, b));
    if (scalar) return best_affine_fit(phi[0], I, 17, 20).err <= delta;
    return flat_f1(phi, I, m, fo).bound <= delta;
  };
  if (flat(lo, hi)) return {{lo, hi}};
  std::vector<Interval> out;
  const double tiny = 1e-13 * (hi - lo);
  double a = lo;
  while (a < hi) {
    if (flat(a, hi)) {
      out.push_back({a, hi});
      break;
    }
    double good = a, bad = hi;
    for (int it = 0; it < 48 && bad - good > tiny; ++it) {
      const double mid = 0.5 * (good + bad);
      (flat(a, mid) ? good : bad) = mid;
    }
    if (good - a <= tiny) throw Error(ErrorKind::DepthExceeded, "no flat interval at the requested scale");
    out.push_back({a, good});
    a = good;
  }
  if (out.size() >= 2) {
    Interval& prev = out[out.size() - 2];
    const Interval last = out.back();
    if (last.hi - last.lo < prev.hi - prev.lo) {
      const double s = 0.5 * (prev.lo + last.hi);
      if (flat(s, last.hi)) {
        prev.hi = s;
        out.back() = {s, last.hi};
      }
    }
  }
  return out;
}

// ---- nondegenerate pieces

std::vector<Box> nondeg_cells(const PolyScalar& phi, double K, double delta, double zeta) {
  const int k = phi.k();
  if (!(K >= 1)) throw Error(ErrorKind::BadParam, "K must be >= 1");
  if (!(zeta > 0 && zeta <= 1)) throw Error(ErrorKind::BadParam, "zeta must lie in (0,1]");
  if (!(delta > 0)) throw Error(ErrorKind::BadParam, "delta must be positive");
  double detmin = std::numeric_limits<double>::infinity();
  for (const Vec& x : cheb_grid(k, 17)) detmin = std::min(detmin, std::abs(phi.hessian(x).determinant()));
  if (detmin < 1.0 / (2 * K)) throw Error(ErrorKind::NotNondegenerate, "grid min |det D^2 phi| below 1/(2K)");

  double eta = std::min(2.0, 0.5 * std::pow(K, -1.0 / zeta));
  const Box dom = unit_box(k);
  for (int attempt = 0; attempt <= 12; ++attempt, eta *= 0.5) {
    const int n_eta = static_cast<int>(std::ceil(2.0 / eta - 1e-12));
    const auto cells = grid_boxes(dom, n_eta);
    bool ok = true;
    for (const Box& c : cells) {
      const Vec ctr = 0.5 * (c.lo + c.hi);
      Eigen::SelfAdjointEigenSolver<Mat> es(phi.hessian(ctr));
      const Vec a = es.eigenvalues();
      const Mat V = es.eigenvectors();
      const double p = a.cwiseAbs().prod();
      const double h = 2.0 / n_eta;
      Vec l(k);
      for (int i = 0; i < k; ++i) l(i) = h * std::sqrt(p / std::abs(a(i)));
      Vec sg(k);
      for (int i = 0; i < k; ++i) sg(i) = a(i) < 0 ? -1.0 : 1.0;
      const Mat Dl = l.asDiagonal();
      for (int mask = 0; mask <= (1 << k) && ok; ++mask) {
        Vec x = ctr;
        if (mask < (1 << k))
          for (int i = 0; i < k; ++i) x(i) = mask >> i & 1 ? c.hi(i) : c.lo(i);
        const Mat M = Dl * V.transpose() * phi.hessian(x) * V * Dl / (h * h * p);
        const Mat E = M - Mat(sg.asDiagonal());
        Eigen::SelfAdjointEigenSolver<Mat> ee(0.5 * (E + E.transpose()), Eigen::EigenvaluesOnly);
        if (ee.eigenvalues().cwiseAbs().maxCoeff() > 0.5) ok = false;
      }
      if (!ok) break;
    }
    if (!ok) continue;
    // Final boxes: half-width h_i = sqrt(delta / (2 w_i)), w_i the row sums of sup |D^2 phi|
    // (side delta^(1/2) for |x|^2).
    Mat M = Mat::Zero(k, k);
    for (const Vec& x : cheb_grid(k, 9)) M = M.cwiseMax(phi.hessian(x).cwiseAbs());
    std::vector<Box> out{dom};
    for (int i = 0; i < k; ++i) {
      const double w = M.row(i).sum();
      const double hi = w > 0 ? std::sqrt(delta / (2 * w)) : 1.0;
      const int ni = std::max(1, static_cast<int>(std::ceil(1.0 / hi - 1e-12)));
      std::vector<Box> next;
      for (const Box& b : out)
        for (int j = 0; j < ni; ++j) {
          Box c = b;
          c.lo(i) = -1.0 + 2.0 * j / ni;
          c.hi(i) = j + 1 == ni ? 1.0 : -1.0 + 2.0 * (j + 1) / ni;
          next.push_back(c);
        }
      out = std::move(next);
    }
    return out;
  }
  throw Error(ErrorKind::NotNondegenerate, "curvature normalization failed after 12 halvings");
}

std::vector<Box> finish_trivial(const PolyScalar& phi, double delta) {
  const int k = phi.k();
  std::vector<Box> out;
  std::vector<std::pair<Box, int>> stack{{unit_box(k), 0}};
  while (!stack.empty()) {
    auto [b, depth] = stack.back();
    stack.pop_back();
    if (f1_cube(compose_affine(phi, b.to_affine())) <= delta) {
      out.push_back(b);
      continue;
    }
    if (depth + 1 > 40) throw Error(ErrorKind::DepthExceeded, "flat quadtree exceeded depth 40");
    auto ch = split_box(b);
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back({*it, depth + 1});
  }
  return out;
}

namespace {

FlatnessWitness scalar_witness(const PolyScalar& phi, const Parallelogram& R, int per_axis) {
  FlatnessWitness w;
  w.sense = Sense::F1;
  w.m = phi.k();
  w.Uprime = Mat::Identity(1, 1);
  if (phi.true_degree() <= 1) {
    Mat A(1, phi.k());
    for (int i = 0; i < phi.k(); ++i) A(0, i) = phi.coeffs()(1 + i);
    w.L = AffineMap(A, Vec::Constant(1, phi.coeffs()(0)));
    return w;
  }
  const AffineFit fit = best_affine_fit(phi, R, per_axis, 20);
  w.L = fit.L;
  w.bound = fit.err;
  w.certified = kCertMargin * fit.err;
  return w;
}

void finalize(PartitionOutput& out, const PolyScalar* root, const PartitionConfig& cfg) {
  const long n = static_cast<long>(out.cells.size());
  if (root && cfg.witnesses)
    parallel_for(n, [&](long i) { out.cells[i].witness = scalar_witness(*root, out.cells[i].region, 9); });
  out.stats.cardinality = n;
  double md = std::numeric_limits<double>::infinity();
  for (const auto& c : out.cells) md = std::min(md, c.region.min_side());
  out.stats.min_dimension = n ? md : 0;
  if (cfg.overlap && n) {
    ProbeSpec ps;
    ps.seed = cfg.seed;
    out.overlap = overlap_profile(out.regions(), {1.0, 2.0}, ps);
  }
}

}  // namespace

PartitionOutput nondeg_partition(const PolyScalar& phi, double K, double delta, double zeta) {
  PartitionOutput out;
  out.k = phi.k();
  out.delta = delta;
  for (const Box& b : nondeg_cells(phi, K, delta, zeta)) out.cells.push_back({b.pgram(), {}, {}, 0});
  out.ledger.append({"nondeg-eta", FactorForm::Constant, std::pow(K, 2.0 * phi.k() / zeta)});
  PartitionConfig cfg;
  cfg.delta = delta;
  finalize(out, &phi, cfg);
  return out;
}

// ---- degeneracy locating

std::vector<Parallelogram> cylinder_callback(const PolyScalar& psi, double sigma) {
  const int k = psi.k();
  if (k == 1) {
    std::vector<Parallelogram> out;
    for (const Interval& I : curve_flat_partition(PolyMap({psi}), sigma, 1))
      out.push_back(Parallelogram::box(Vec::Constant(1, I.lo), Vec::Constant(1, I.hi)));
    return out;
  }
  if (k != 2) throw Error(ErrorKind::BadDimension, "cylinder_callback needs k <= 2");
  if (psi.true_degree() <= 1) return {Parallelogram::cube(2)};
  Mat G = Mat::Zero(2, 2);
  for (const Vec& x : cheb_grid(2, 9)) {
    const Mat D = psi.hessian(x);
    G += D * D;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  Vec a = es.eigenvectors().col(1);
  for (int i = 0; i < 2; ++i)
    if (std::abs(a(i)) < 1e-9) a(i) = 0;
  a.normalize();
  if (a(0) < 0 || (a(0) == 0 && a(1) < 0)) a = -a;
  const PolyScalar g = compose_affine(psi, AffineMap(Mat(a), Vec::Zero(2)));
  const PolyScalar ridge = compose_affine(g, AffineMap(Mat(a.transpose()), Vec::Zero(1)));
  if (strip_affine(psi - ridge).sum_abs_coeff() > 1e-8 * std::max(1.0, psi.max_abs_coeff())) {
    std::vector<Parallelogram> out;
    for (const Box& b : finish_trivial(psi, sigma)) out.push_back(b.pgram());
    return out;
  }
  const double T = a.cwiseAbs().sum();
  Vec ap(2);
  ap << -a(1), a(0);
  std::vector<Parallelogram> out;
  for (const Interval& I : curve_flat_partition(PolyMap({g}), sigma, 1, -T, T)) {
    // Square clipped to the strip lo <= a.x <= hi.
    std::vector<Vec> poly;
    for (int i = 0; i < 4; ++i) {
      Vec v(2);
      v << (i == 1 || i == 2 ? 1.0 : -1.0), (i >= 2 ? 1.0 : -1.0);
      poly.push_back(v);
    }
    for (int side = 0; side < 2; ++side) {
      auto inside = [&](const Vec& v) { return side == 0 ? a.dot(v) >= I.lo : a.dot(v) <= I.hi; };
      const double lev = side == 0 ? I.lo : I.hi;
      std::vector<Vec> next;
      for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec& P = poly[i];
        const Vec& Q = poly[(i + 1) % poly.size()];
        const bool ip = inside(P), iq = inside(Q);
        if (ip) next.push_back(P);
        if (ip != iq) {
          const double t = (lev - a.dot(P)) / (a.dot(Q) - a.dot(P));
          next.push_back(P + t * (Q - P));
        }
      }
      poly = std::move(next);
    }
    if (poly.size() < 3) continue;
    // Bounding rectangle in the (a, a_perp) frame.
    double u0 = 1e300, u1 = -1e300;
    for (const Vec& v : poly) {
      u0 = std::min(u0, ap.dot(v));
      u1 = std::max(u1, ap.dot(v));
    }
    if (u1 - u0 <= 1e-14) continue;
    Mat E(2, 2);
    E.col(0) = 0.5 * (I.hi - I.lo) * a;
    E.col(1) = 0.5 * (u1 - u0) * ap;
    const Vec c = 0.5 * (I.lo + I.hi) * a + 0.5 * (u0 + u1) * ap;
    out.push_back(pgram_from_affine(AffineMap(E, c)));
  }
  return out;
}

LocateCallbacks default_callbacks(int) {
  LocateCallbacks cb;
  cb.degenerate = cylinder_callback;
  cb.nondegenerate = [](const PolyScalar& phi, double K, double delta) {
    std::vector<Parallelogram> out;
    for (const Box& b : nondeg_cells(phi, K, delta)) out.push_back(b.pgram());
    return out;
  };
  return cb;
}

double estimate_beta(const DegDet& H, int k, int d, std::uint64_t seed) {
  if (H.kind != DetKind::HessianDet || k == 1 || d <= 2) return 1.0;
  static std::mutex mu;
  static std::map<std::tuple<int, int, std::uint64_t>, double> cache;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find({k, d, seed});
    if (it != cache.end()) return it->second;
  }
  std::mt19937_64 rng(seed * 6364136223846793005ULL + 17);
  std::normal_distribution<double> gauss;
  double beta = 1.0;
  ProjectOptions po;
  po.directions = 90;
  for (int t = 0; t < 6; ++t) {
    Vec a(k);
    for (int i = 0; i < k; ++i) a(i) = gauss(rng);
    a.normalize();
    PolyScalar g(1, d);
    for (int i = 2; i <= d; ++i) g.coeffs()(i) = gauss(rng);
    PolyScalar r(k, d);
    for (int i = 0; i < r.coeffs().size(); ++i) r.coeffs()(i) = gauss(rng);
    const double eta = std::pow(10.0, -2.0 - t % 3);
    PolyScalar phi = compose_affine(g, AffineMap(Mat(a.transpose()), Vec::Zero(1))) + r * (eta / r.max_abs_coeff());
    phi = strip_affine(phi);
    phi = phi * (1.0 / phi.max_abs_coeff());
    const double sig = grid_sup(apply_det(H, PolyMap({phi})), 17) * (1 + 1e-6);
    if (!(sig > 0 && sig < 1)) continue;
    try {
      const DegCert c = degenerate_project(PolyMap({phi}), H, sig, po);
      if (c.err > 0 && c.err < 1) beta = std::min(beta, std::log(c.err) / std::log(sig));
    } catch (const Error&) {
    }
  }
  beta = std::clamp(beta, 0.1, 1.0);
  std::lock_guard<std::mutex> lock(mu);
  cache[{k, d, seed}] = beta;
  return beta;
}

namespace {

struct Task {
  AffineMap lam;  // [-1,1]^k -> original coordinates
  PolyScalar phi;
  double delta;
  std::vector<int> lineage;
};

struct Spawn {
  Task task;
  RescaleRecord rec;
};

struct TaskResult {
  std::vector<std::pair<AffineMap, std::vector<int>>> cells;
  std::vector<Spawn> spawned;
  int fallbacks = 0;
};

AffineMap affine_from_poly(const PolyScalar& aff) {
  Mat A(1, aff.k());
  for (int i = 0; i < aff.k(); ++i) A(0, i) = aff.coeffs()(1 + i);
  return AffineMap(A, Vec::Constant(1, aff.coeffs()(0)));
}

PolyScalar poly_from_affine(const AffineMap& L, int d) {
  const int k = L.in_dim();
  PolyScalar p(k, d);
  p.coeffs()(0) = L.offset(0);
  for (int i = 0; i < k; ++i) p.coeffs()(1 + i) = L.matrix(0, i);
  return p;
}

// Least-squares fit of g(x_axis) + linear in the other variables, with its grid error.
std::pair<PolyScalar, double> axis_ridge(const PolyScalar& phi, int axis) {
  const int k = phi.k(), d = phi.d();
  const auto grid = cheb_grid(k, 17);
  std::vector<MultiIndex> basis;
  for (int j = 0; j <= d; ++j) {
    MultiIndex a(k, 0);
    a[axis] = j;
    basis.push_back(a);
  }
  for (int i = 0; i < k; ++i)
    if (i != axis) {
      MultiIndex a(k, 0);
      a[i] = 1;
      basis.push_back(a);
    }
  Mat X(grid.size(), basis.size());
  Vec y(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    y(g) = phi.eval(grid[g]);
    for (std::size_t j = 0; j < basis.size(); ++j) {
      double v = 1;
      for (int i = 0; i < k; ++i) v *= std::pow(grid[g](i), basis[j][i]);
      X(g, j) = v;
    }
  }
  const Vec c = X.colPivHouseholderQr().solve(y);
  PolyScalar q(k, d);
  for (std::size_t j = 0; j < basis.size(); ++j) q.set_coeff(basis[j], c(j));
  return {q, (X * c - y).cwiseAbs().maxCoeff()};
}

struct Engine {
  const DegDet& H;
  const LocateCallbacks& cb;
  int k;
  double K, beta;
  int n0;
  double floor;  // smallest box side in original coordinates

  void emit(TaskResult& r, const Task& t, const AffineMap& sub) const {
    r.cells.push_back({t.lam.compose(sub), t.lineage});
  }

  void trivial(TaskResult& r, const Task& t, const AffineMap& sub, const PolyScalar& p, double delta) const {
    for (const Box& b : finish_trivial(p, delta)) emit(r, t, sub.compose(b.to_affine()));
    ++r.fallbacks;
  }

  TaskResult run(const Task& t) const {
    TaskResult r;
    if (f1_cube(t.phi) <= t.delta) {
      emit(r, t, AffineMap::identity(k));
      return r;
    }
    const PolyScalar h = apply_det(H, PolyMap({t.phi}));
    // Original-coordinate extent of the unit cube along each pullback axis.
    Vec scale(k);
    std::vector<int> n(k);
    for (int i = 0; i < k; ++i) {
      scale(i) = t.lam.matrix.col(i).norm();
      n[i] = std::max(1, std::min(n0, static_cast<int>(std::floor(2 * scale(i) / floor))));
    }
    BoxSplit split = refine_boxes(h, unit_box(k), n, 1.0 / K, 0.5 / K * (1 - 1e-12), scale, floor);

    for (const Box& b : merge_boxes(std::move(split.dropped))) {
      const AffineMap lb = b.to_affine();
      const PolyScalar p0 = strip_affine(compose_affine(t.phi, lb));
      if (p0.max_abs_coeff() == 0 || f1_cube(p0) <= t.delta) {
        emit(r, t, lb);
        continue;
      }
      // Rescale by the product of half-widths so that H is unchanged (k <= 2).
      const double s = k == 1 ? std::pow(0.5 * (b.hi(0) - b.lo(0)), 2)
                              : 0.25 * (b.hi(0) - b.lo(0)) * (b.hi(1) - b.lo(1));
      const PolyScalar ph = p0 * (1.0 / s);
      // Every merged piece carries inf |H| >= 1/(2K).
      std::vector<Parallelogram> cells;
      try {
        cells = cb.nondegenerate(ph, std::max(1.0, 2 * K), t.delta / s);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NotNondegenerate) throw;
        trivial(r, t, lb, ph, t.delta / s);
        continue;
      }
      for (const Parallelogram& c : cells) {
        if (f1_cube(compose_affine(ph, c.to_affine()), 7) > kNondegContractC * t.delta / s)
          throw Error(ErrorKind::CallbackContractViolation, "nondegenerate callback returned a non-flat cell");
        emit(r, t, lb.compose(c.to_affine()));
      }
    }

    ProjectOptions po;
    po.directions = 90;
    for (const Box& b : merge_boxes(std::move(split.kept))) {
      const AffineMap lb = b.to_affine();
      const PolyScalar p0 = strip_affine(compose_affine(t.phi, lb));
      const double s = p0.max_abs_coeff();
      if (s == 0 || f1_cube(p0) <= t.delta) {
        emit(r, t, lb);
        continue;
      }
      const PolyScalar ph = p0 * (1.0 / s);
      PolyScalar psi;
      double err;
      if (k == 1) {
        const AffineFit fit = best_affine_fit(ph, Parallelogram::cube(1), 17, 20);
        psi = poly_from_affine(fit.L, ph.d());
        err = fit.err;
      } else {
        const double sig = grid_sup(apply_det(H, PolyMap({ph})), 17) * (1 + 1e-6) + 1e-300;
        try {
          const DegCert c = degenerate_project(PolyMap({ph}), H, sig, po);
          psi = c.psi[0];
          err = c.err;
          // An axis ridge gives cylinders that stay inside the box; take it when it fits under the same level.
          const double lev = std::max(std::pow(K, -beta) * f1_cube(ph), 2 * err);
          if (H.kind == DetKind::HessianDet)
            for (int axis = 0; axis < k; ++axis) {
              auto [q, e] = axis_ridge(ph, axis);
              if (2 * e <= lev) {
                psi = q;
                err = std::max(err, e);
                break;
              }
            }
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::ProjectionFailed && e.kind() != ErrorKind::NotInSublevel) throw;
          trivial(r, t, lb, ph, t.delta / s);
          continue;
        }
      }
      // Level relative to the piece's own flatness, so each round gains K^beta.
      const double sp = std::max(std::pow(K, -beta) * f1_cube(ph), 2 * err);
      const double level = sp - err;
      const auto cells = cb.degenerate(psi, level);
      for (const Parallelogram& c : cells)
        if (f1_cube(compose_affine(psi, c.to_affine()), 7) > kDegenerateContractC * level + 1e-12)
          throw Error(ErrorKind::CallbackContractViolation, "degenerate callback returned a non-flat cell");
      for (const Parallelogram& c : cells) {
        const AffineMap Xi = lb.compose(c.to_affine());
        const PolyScalar P = compose_affine(t.phi, Xi);
        const PolyScalar aff = affine_part(P);
        const PolyScalar Pn = P - aff;
        const double f1c = f1_cube(Pn);
        if (f1c <= t.delta) {
          emit(r, t, Xi);
          continue;
        }
        const double sc = std::max(s * sp, f1c);
        Spawn sw;
        sw.task = {t.lam.compose(Xi), Pn * (1.0 / sc), t.delta / sc, t.lineage};
        const AffineMap L = affine_from_poly(aff);
        sw.rec = {Xi, Mat::Identity(1, 1), -L.matrix, -L.offset, Vec::Constant(1, sc), -1};
        r.spawned.push_back(std::move(sw));
      }
    }
    return r;
  }
};

void check_axioms(const DegDet& H, const PolyScalar& phi, std::uint64_t seed) {
  const int k = phi.k(), d = phi.d();
  if (H.kind == DetKind::WronskianGram) throw Error(ErrorKind::NotADegeneracyDeterminant, "WronskianGram needs a curve");
  if (num_monomials(k, d) <= kCoeffMapGuard) {
    const ClosureResult cl = scaling_closure_check(H, k, d, 1, 8, seed);
    if (!cl.ok) throw Error(ErrorKind::NotADegeneracyDeterminant, "zero set not closed under scaling");
  }
  AffineMap lam(Mat::Identity(k, k) * 0.5, Vec::Zero(k));
  if (apply_det(H, PolyMap({phi})).true_degree() >= 0) {
    const RescaleCheck rc = rescale_regularity_check(H, PolyMap({phi}), lam, 0.5);
    if (!rc.pass) throw Error(ErrorKind::NotADegeneracyDeterminant, "rescaling regularity fails");
  }
}

}  // namespace

PartitionOutput degeneracy_locating(const PolyMap& phi, const DegDet& H, const PartitionConfig& cfg,
                                    const LocateCallbacks& cb) {
  cfg.validate();
  if (phi.l() != 1) throw Error(ErrorKind::BadDimension, "degeneracy_locating takes scalar graphs");
  const int k = phi.k();
  if (k < 1 || k > 2) throw Error(ErrorKind::BadDimension, "degeneracy_locating supports k = 1, 2");
  const PolyScalar& root = phi[0];
  check_axioms(H, root, cfg.seed);

  PartitionOutput out;
  out.k = k;
  out.delta = cfg.delta;
  const double K = std::pow(cfg.delta, -cfg.epsilon);
  const double beta = cfg.beta > 0 ? cfg.beta : estimate_beta(H, k, root.d(), cfg.seed);
  int N = bootstrap_cost(cfg.delta, cfg.epsilon, beta).N;
  if (cfg.max_rounds > 0) N = std::min(N, cfg.max_rounds);
  out.stats.rounds = N;
  out.stats.beta = beta;
  out.ledger.append({"trivial-cover", FactorForm::PowerOfDelta, cfg.epsilon});

  const Engine eng{H, cb, k, K, beta, std::max(1, static_cast<int>(std::ceil(2 * K - 1e-12))), cfg.delta};
  const PolyScalar aff = affine_part(root);
  const PolyScalar p0 = root - aff;
  const double s0 = p0.max_abs_coeff();
  if (s0 == 0) {
    out.cells.push_back({Parallelogram::cube(k), {}, {}, 0});
    finalize(out, &root, cfg);
    return out;
  }
  const AffineMap L0 = affine_from_poly(aff);
  out.records.push_back({AffineMap::identity(k), Mat::Identity(1, 1), -L0.matrix, -L0.offset, Vec::Constant(1, s0), -1});
  std::vector<Task> tasks{{AffineMap::identity(k), p0 * (1.0 / s0), cfg.delta / s0, {0}}};

  auto take = [&](std::vector<TaskResult>& results, int round) {
    std::vector<Task> next;
    for (auto& r : results) {
      for (auto& [lam, lin] : r.cells) out.cells.push_back({pgram_from_affine(lam), {}, std::move(lin), round});
      for (auto& sw : r.spawned) {
        sw.rec.parent = sw.task.lineage.empty() ? -1 : sw.task.lineage.back();
        sw.task.lineage.push_back(static_cast<int>(out.records.size()));
        out.records.push_back(std::move(sw.rec));
        next.push_back(std::move(sw.task));
      }
      out.stats.fallbacks += r.fallbacks;
    }
    return next;
  };

  for (int round = 1; round <= N && !tasks.empty(); ++round) {
    out.stats.depth = round;
    out.stats.tasks += static_cast<long>(tasks.size());
    out.ledger.append({"round " + std::to_string(round), FactorForm::PowerOfDelta, cfg.epsilon * cfg.epsilon});
    out.ledger.append({"round " + std::to_string(round), FactorForm::LogCount, double(tasks.size())});
    std::vector<TaskResult> results(tasks.size());
    parallel_for(static_cast<long>(tasks.size()), [&](long i) { results[i] = eng.run(tasks[i]); });
    tasks = take(results, round);
  }
  if (!tasks.empty()) {
    std::vector<TaskResult> results(tasks.size());
    parallel_for(static_cast<long>(tasks.size()), [&](long i) {
      const Task& t = tasks[i];
      eng.trivial(results[i], t, AffineMap::identity(k), t.phi, t.delta);
    });
    take(results, N + 1);
  }
  finalize(out, &root, cfg);
  return out;
}

PartitionOutput degeneracy_locating(const PolyMap& phi, const DegDet& H, const PartitionConfig& cfg) {
  return degeneracy_locating(phi, H, cfg, default_callbacks(phi.k()));
}

PartitionOutput refined_bivariate_partition(const PolyScalar& phi, const PartitionConfig& cfg) {
  if (phi.k() != 2) throw Error(ErrorKind::BadDimension, "refined_bivariate_partition needs k = 2");
  PartitionConfig c = cfg;
  const int cap = static_cast<int>(std::floor(1.0 / cfg.epsilon + 1e-9));
  c.max_rounds = c.max_rounds > 0 ? std::min(c.max_rounds, cap) : cap;
  return degeneracy_locating(PolyMap({phi}), DegDet::hessian(), c);
}

PartitionOutput refined_bivariate_partition(const PolyScalar& phi, double delta, double epsilon) {
  PartitionConfig cfg;
  cfg.delta = delta;
  cfg.epsilon = epsilon;
  return refined_bivariate_partition(phi, cfg);
}

PartitionOutput separable_partition(const std::vector<PolyScalar>& factors, double delta, double epsilon) {
  if (factors.empty()) throw Error(ErrorKind::UnsupportedFactor, "no factors");
  const int J = static_cast<int>(factors.size());
  PartitionConfig cfg;
  cfg.delta = delta / J;
  cfg.epsilon = epsilon;
  cfg.overlap = false;
  std::vector<PartitionOutput> parts;
  PartitionOutput out;
  out.delta = delta;
  for (int j = 0; j < J; ++j) {
    const PolyScalar& f = factors[j];
    const int kj = f.k();
    if (kj == 1) {
      parts.push_back(degeneracy_locating(PolyMap({f}), DegDet::hessian(), cfg));
    } else if (kj == 2) {
      parts.push_back(refined_bivariate_partition(f, cfg));
    } else {
      double detmin = std::numeric_limits<double>::infinity();
      for (const Vec& x : cheb_grid(kj, 9)) detmin = std::min(detmin, std::abs(f.hessian(x).determinant()));
      if (!(detmin > 1e-12)) throw Error(ErrorKind::UnsupportedFactor, "factor of dimension >= 3 without curvature");
      parts.push_back(nondeg_partition(f, std::max(1.0, 1.0 / detmin), cfg.delta));
    }
    out.k += kj;
    for (const auto& fac : parts.back().ledger.factors)
      out.ledger.append({"factor " + std::to_string(j) + ": " + fac.source, fac.form, fac.value});
    out.stats.rounds = std::max(out.stats.rounds, parts.back().stats.rounds);
    out.stats.depth = std::max(out.stats.depth, parts.back().stats.depth);
    out.stats.tasks += parts.back().stats.tasks;
    out.stats.fallbacks += parts.back().stats.fallbacks;
  }
  std::vector<std::size_t> idx(J, 0);
  while (true) {
    Vec c(out.k), h(out.k);
    Mat D = Mat::Zero(out.k, out.k);
    Mat A = Mat::Zero(1, out.k);
    double off = 0, bound = 0;
    int at = 0;
    for (int j = 0; j < J; ++j) {
      const Cell& cj = parts[j].cells[idx[j]];
      const int kj = cj.region.dim();
      c.segment(at, kj) = cj.region.center;
      h.segment(at, kj) = cj.region.half_lengths;
      D.block(at, at, kj, kj) = cj.region.dirs;
      A.block(0, at, 1, kj) = cj.witness.L->matrix;
      off += cj.witness.L->offset(0);
      bound += cj.witness.bound;
      at += kj;
    }
    Cell cell{Parallelogram(c, D, h), {}, {}, 0};
    cell.witness.sense = Sense::F1;
    cell.witness.m = out.k;
    cell.witness.Uprime = Mat::Identity(1, 1);
    cell.witness.L = AffineMap(A, Vec::Constant(1, off));
    cell.witness.bound = bound;
    cell.witness.certified = kCertMargin * bound;
    out.cells.push_back(std::move(cell));
    int j = J - 1;
    while (j >= 0 && ++idx[j] == parts[j].cells.size()) idx[j--] = 0;
    if (j < 0) break;
  }
  PartitionConfig fin;
  fin.delta = delta;
  fin.witnesses = false;
  finalize(out, nullptr, fin);
  return out;
}

// ---- radial reduction

namespace {

double radial_c(int l) { return 1.0 / std::sqrt(10.0 * l); }

std::vector<Vec> box_grid(const Parallelogram& P, int per_axis) {
  std::vector<Vec> out;
  const int n = P.dim();
  std::vector<int> idx(n, 0);
  const AffineMap lam = P.to_affine();
  while (true) {
    Vec u(n);
    for (int i = 0; i < n; ++i) u(i) = per_axis == 1 ? 0.0 : -1.0 + 2.0 * idx[i] / (per_axis - 1);
    out.push_back(lam(u));
    int i = 0;
    while (i < n && ++idx[i] == per_axis) idx[i++] = 0;
    if (i == n) break;
  }
  return out;
}

std::vector<Parallelogram> cube_grid(int n, int per_axis) {
  std::vector<Parallelogram> out;
  for (const Box& b : grid_boxes(unit_box(n), per_axis)) out.push_back(b.pgram());
  return out;
}

// Flat intervals of r at level delta, cached per delta.
struct IntervalCache {
  std::map<long long, std::vector<Interval>> by_delta;
};

}  // namespace

double RadialSpec::psi_eval(const Vec& t) const {
  if (psi_kind == PsiKind::Poly) return psi->eval(t);
  return std::sqrt(1.0 - t.squaredNorm() / (10.0 * l));
}

Vec RadialSpec::psi_grad(const Vec& t) const {
  if (psi_kind == PsiKind::Poly) return psi->grad(t);
  return -t / (10.0 * l * psi_eval(t));
}

Mat RadialSpec::psi_hessian(const Vec& t) const {
  if (psi_kind == PsiKind::Poly) return psi->hessian(t);
  const double a = 10.0 * l, p = psi_eval(t);
  return -Mat::Identity(l, l) / (a * p) - t * t.transpose() / (a * a * p * p * p);
}

void RadialSpec::validate() const {
  if (r.k() < 1 || l < 1) throw Error(ErrorKind::BadSpec, "radial spec needs k, l >= 1");
  if (psi_kind == PsiKind::Poly && (!psi || psi->k() != l))
    throw Error(ErrorKind::BadSpec, "polynomial psi must have l variables");
  if (r_affine && r.true_degree() > 1) throw Error(ErrorKind::BadSpec, "r flagged affine but has degree > 1");
  for (const Vec& s : cheb_grid(r.k(), 9)) {
    const double v = r.eval(s);
    if (v < 1 - 1e-12 || v > 3 + 1e-12) throw Error(ErrorKind::BadSpec, "r leaves [1,3] on [-1,1]^k");
  }
  if (!r_affine) {
    for (const Vec& t : cheb_grid(l, 9)) {
      const double L = psi_eval(t) - t.dot(psi_grad(t));
      if (std::abs(L) < 1e-6) throw Error(ErrorKind::BadSpec, "L psi vanishes");
    }
  }
}

SumCallback default_sum_callback(const RadialSpec& spec, double) {
  auto cache = std::make_shared<IntervalCache>();
  const int l = spec.l;
  return [spec, cache, l](const SumRequest& q) {
    // T: global cubes of side ~delta^(1/2) whose centre lies in T_0.
    const Parallelogram T0 = dilate(q.T2, 0.5);
    const int nt = static_cast<int>(std::ceil(2.0 / std::sqrt(q.delta) - 1e-9));
    std::vector<Parallelogram> Ts;
    Vec lo, hi;
    T0.bbox(lo, hi);
    std::vector<int> a(l), b(l);
    for (int i = 0; i < l; ++i) {
      a[i] = std::max(0, static_cast<int>(std::floor((lo(i) + 1) / 2 * nt)) - 1);
      b[i] = std::min(nt - 1, static_cast<int>(std::ceil((hi(i) + 1) / 2 * nt)));
    }
    std::vector<int> idx(a);
    while (true) {
      Vec clo(l), chi(l);
      for (int i = 0; i < l; ++i) {
        clo(i) = -1.0 + 2.0 * idx[i] / nt;
        chi(i) = -1.0 + 2.0 * (idx[i] + 1) / nt;
      }
      if (T0.contains_point(0.5 * (clo + chi), 1e-12)) Ts.push_back(Parallelogram::box(clo, chi));
      int i = 0;
      while (i < l && ++idx[i] > b[i]) idx[i] = a[i], ++i;
      if (i == l) break;
    }
    // S: untouched for affine r, otherwise the flat intervals of r at delta with centre in S.
    std::vector<Parallelogram> Ss;
    if (spec.r_affine) {
      Ss.push_back(q.S);
    } else {
      if (spec.k() != 1) throw Error(ErrorKind::BadDimension, "non-affine r needs k = 1");
      auto key = qkey(q.delta);
      auto it = cache->by_delta.find(key);
      if (it == cache->by_delta.end())
        it = cache->by_delta.emplace(key, curve_flat_partition(PolyMap({spec.r}), q.delta, 1)).first;
      for (const Interval& I : it->second)
        if (q.S.contains_point(Vec::Constant(1, 0.5 * (I.lo + I.hi)), 1e-12))
          Ss.push_back(Parallelogram::box(Vec::Constant(1, I.lo), Vec::Constant(1, I.hi)));
    }
    std::vector<PiTile> out;
    for (const auto& S : Ss)
      for (const auto& T : Ts) out.push_back({S, T});
    return out;
  };
}

RadialRun radial_reduce(const RadialSpec& spec, const PartitionConfig& cfg, const SumCallback& cb) {
  cfg.validate();
  spec.validate();
  const double delta = cfg.delta, eps = cfg.epsilon;
  const int k = spec.k(), l = spec.l;
  RadialRun run;
  for (double e = std::min(1.0, 10 * eps);; e /= (1 - eps)) {
    run.schedule.push_back(std::pow(delta, std::min(1.0, e)));
    if (e >= 1) break;
  }
  run.steps = static_cast<int>(run.schedule.size());
  const double d1 = run.schedule.front();
  const int n1 = static_cast<int>(std::ceil(2.0 / std::sqrt(d1) - 1e-9));
  for (const auto& S : cube_grid(k, n1))
    for (const auto& T : cube_grid(l, n1)) run.tiles.push_back({S, T});
  run.ledger.append({"radial-initial", FactorForm::PowerOfDelta, 0.0});

  for (int i = 1; i < run.steps; ++i) {
    const double sigma = run.schedule[i - 1], di = run.schedule[i];
    std::vector<std::vector<PiTile>> next(run.tiles.size());
    std::vector<double> ratio(run.tiles.size(), 0), lemma(run.tiles.size(), 0);
    parallel_for(static_cast<long>(run.tiles.size()), [&](long j) {
      const PiTile& tile = run.tiles[j];
      const double rc = spec.r.eval(tile.S.center);
      auto rt = [&spec, rc](const Vec& s) { return spec.r.eval(s) / rc; };
      AffineMap A;
      if (spec.r_affine) {
        A = AffineMap(Mat(spec.r.grad(tile.S.center).transpose() / rc), Vec::Constant(1, 1.0));
        A.offset(0) -= A.matrix.row(0).dot(tile.S.center);
      } else {
        const AffineFit f = best_affine_fit(spec.r * (1.0 / rc), tile.S, 9, 20);
        A = f.L;
      }
      const Vec t0 = tile.T.center;
      const double p0 = spec.psi_eval(t0);
      const Vec g0 = spec.psi_grad(t0);
      auto Q = [&](const Vec& tau) { return spec.psi_eval(tau + t0) - p0 - g0.dot(tau); };
      const Parallelogram T0(Vec::Zero(l), tile.T.dirs, tile.T.half_lengths);
      for (const Vec& s : box_grid(tile.S, 5)) {
        const double rs = rt(s), as = A(s)(0);
        for (const Vec& tau : box_grid(T0, 5)) {
          const Vec theta = rs * (tau + t0) - as * t0;
          const double g = std::abs(Q(theta) - rs * Q(tau));
          ratio[j] = std::max(ratio[j], g / di);
          if (g >= di) {
            std::ostringstream os;
            os << "guard fired at s=" << s.transpose() << " tau=" << tau.transpose()
               << " theta=" << theta.transpose() << " gap=" << g << " delta_i=" << di;
            throw Error(ErrorKind::ApproximationGuardFailed, os.str());
          }
          // r(s) T_0 + (r(s) - A(s)) t_0 against T_0.
          const Vec p = rs * tau + (rs - as) * t0;
          lemma[j] = std::max(lemma[j], T0.pullback(p).cwiseAbs().maxCoeff());
        }
      }
      SumRequest q{tile.S, dilate(tile.T, 2.0), sigma, di, p0 - t0.dot(g0), rt};
      next[j] = cb(q);
    });
    run.guard_checks += static_cast<long>(run.tiles.size()) * static_cast<long>(std::pow(5, k + l));
    for (std::size_t j = 0; j < run.tiles.size(); ++j) {
      run.guard_max_ratio = std::max(run.guard_max_ratio, ratio[j]);
      run.lemma_constant = std::max(run.lemma_constant, lemma[j]);
    }
    if (run.lemma_constant > 4)
      throw Error(ErrorKind::CallbackContractViolation, "sheared tile not equivalent to T_0 at constant 4");
    std::set<std::vector<long long>> seen;
    std::vector<PiTile> tiles;
    for (auto& v : next)
      for (PiTile& t : v) {
        std::vector<long long> key;
        for (int a = 0; a < k; ++a) key.push_back(qkey(t.S.center(a)));
        for (int a = 0; a < l; ++a) key.push_back(qkey(t.T.center(a)));
        if (seen.insert(key).second) tiles.push_back(std::move(t));
      }
    if (tiles.empty()) throw Error(ErrorKind::CallbackContractViolation, "sum callback returned no tiles");
    run.tiles = std::move(tiles);
    const double e0 = std::log(sigma) / std::log(delta), e1 = std::log(di) / std::log(delta);
    run.ledger.append({"radial-step", FactorForm::PowerOfDelta, eps * (e1 - e0)});
    run.ledger.append({"radial-step", FactorForm::LogCount, static_cast<double>(run.tiles.size())});
  }
  return run;
}

RadialRun radial_reduce(const RadialSpec& spec, const PartitionConfig& cfg) {
  return radial_reduce(spec, cfg, default_sum_callback(spec, cfg.delta));
}

Vec radial_chart_point(double rho, const Vec& tp) {
  const int l = static_cast<int>(tp.size());
  Vec t(l + 1);
  t.head(l) = radial_c(l) * tp;
  t(l) = std::sqrt(1.0 - tp.squaredNorm() / (10.0 * l));
  return rho * t;
}

RadialPartition radial_surface_partition(const PolyScalar& gamma, double delta, double epsilon, int n) {
  if (gamma.k() != 1) throw Error(ErrorKind::BadDimension, "gamma must be univariate");
  if (n < 3) throw Error(ErrorKind::BadDimension, "radial surfaces need n >= 3");
  const PolyScalar dg = gamma.derivative(0);
  double gmax = 0, gmin = std::numeric_limits<double>::infinity();
  int sign = 0;
  for (int i = 0; i <= 256; ++i) {
    const double v = dg.eval(Vec::Constant(1, 1.0 + i / 256.0));
    const int sv = v > 0 ? 1 : (v < 0 ? -1 : 0);
    if (sv == 0 || (sign != 0 && sv != sign)) throw Error(ErrorKind::NotMonotone, "gamma' vanishes on [1,2]");
    sign = sv;
    gmax = std::max(gmax, std::abs(v));
    gmin = std::min(gmin, std::abs(v));
  }
  if (gmin < 1e-9 * std::max(1.0, gmax)) throw Error(ErrorKind::NotMonotone, "gamma' vanishes on [1,2]");

  RadialPartition rp;
  rp.radial = curve_flat_partition(PolyMap({gamma}), delta, 1, 1.0, 2.0);
  const int l = n - 2;
  RadialSpec spec;
  spec.r = PolyScalar(1, 1);
  spec.r.set_coeff({0}, 1.5);
  spec.r.set_coeff({1}, 0.5);
  spec.r_affine = true;
  spec.l = l;
  PartitionConfig cfg;
  cfg.delta = delta;
  cfg.epsilon = epsilon;
  cfg.family = Family::RadialSurface;
  rp.run = radial_reduce(spec, cfg);
  rp.guard_max_ratio = rp.run.guard_max_ratio;
  rp.lemma_constant = rp.run.lemma_constant;

  PartitionOutput& out = rp.out;
  out.k = n - 1;
  out.delta = delta;
  out.ledger = rp.run.ledger;
  out.ledger.append({"radial-intervals", FactorForm::LogCount, static_cast<double>(rp.radial.size())});
  struct Job {
    double r0, r1;
    Parallelogram T;
  };
  std::vector<Job> jobs;
  for (const Interval& I : rp.radial)
    for (const PiTile& t : rp.run.tiles) {
      const double a = 1.5 + 0.5 * (t.S.center(0) - t.S.half_lengths(0));
      const double b = 1.5 + 0.5 * (t.S.center(0) + t.S.half_lengths(0));
      const double r0 = std::max(a, I.lo), r1 = std::min(b, I.hi);
      if (r1 - r0 > 1e-12) jobs.push_back({r0, r1, t.T});
    }
  out.cells.resize(jobs.size());
  const int np = std::max(3, 33 / l);
  parallel_for(static_cast<long>(jobs.size()), [&](long j) {
    const Job& jb = jobs[j];
    // Frame at the sector centre: radial unit vector, then Gram-Schmidt on the chart tangents.
    const Vec tc = jb.T.center;
    Mat F(n - 1, n - 1);
    F.col(0) = radial_chart_point(1.0, tc);
    for (int a = 0; a < l; ++a) {
      Vec e = Vec::Zero(l);
      e(a) = 1e-6;
      F.col(a + 1) = (radial_chart_point(1.0, tc + e) - radial_chart_point(1.0, tc - e)) / 2e-6;
    }
    Eigen::HouseholderQR<Mat> qr(F);
    Mat Fq = qr.householderQ() * Mat::Identity(n - 1, n - 1);
    std::vector<Vec> pts;
    for (int ir = 0; ir < 9; ++ir) {
      const double rho = jb.r0 + (jb.r1 - jb.r0) * ir / 8.0;
      for (const Vec& tp : box_grid(jb.T, np)) pts.push_back(radial_chart_point(rho, tp));
    }
    Vec lo = Vec::Constant(n - 1, 1e300), hi = Vec::Constant(n - 1, -1e300);
    Mat X(pts.size(), n), Y(pts.size(), 1);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec y = Fq.transpose() * pts[i];
      lo = lo.cwiseMin(y);
      hi = hi.cwiseMax(y);
      X(i, 0) = 1;
      X.row(i).tail(n - 1) = pts[i].transpose();
      Y(i, 0) = gamma.eval(Vec::Constant(1, pts[i].norm()));
    }
    const Vec pad = Vec::Constant(n - 1, 1e-12);
    lo -= pad;
    hi += pad;
    Cell& c = out.cells[j];
    c.region = Parallelogram(Fq * (0.5 * (lo + hi)), Fq, 0.5 * (hi - lo));
    const MinimaxFit fit = minimax_fit(X, Y);
    FlatnessWitness w;
    w.sense = Sense::F1;
    w.m = n - 1;
    w.Uprime = Mat::Identity(1, 1);
    w.L = AffineMap(Mat(fit.theta.bottomRows(n - 1).transpose()), Vec::Constant(1, fit.theta(0, 0)));
    w.bound = fit.err;
    w.certified = fit.err * kCertMargin;
    c.witness = w;
  });
  finalize(out, nullptr, cfg);
  return rp;
}

long radial_uncovered(const RadialPartition& rp, int n, int probes) {
  const CoverIndex idx(rp.out.regions());
  const int l = n - 2;
  long miss = 0;
  for (int i = 0; i < probes; ++i) {
    const Vec h = halton(static_cast<std::uint64_t>(i) + 1, l + 1);
    const Vec tp = (2 * h.tail(l).array() - 1).matrix();
    if (idx.count(radial_chart_point(1.0 + h(0), tp)) == 0) ++miss;
  }
  return miss;
}

// ---- audits

PartitionAudit audit_partition(const PartitionOutput& out, const Parallelogram& domain, double delta, double flat_C,
                               double dim_floor, int probes) {
  PartitionAudit a;
  if (out.cells.empty()) {
    a.failing = "coverage";
    return a;
  }
  const auto regions = out.regions();
  const CoverIndex index(regions);
  const int n = domain.dim();
  const AffineMap lam = domain.to_affine();
  for (int s = 0; s < probes; ++s) {
    const Vec u = 2.0 * halton(static_cast<std::uint64_t>(s) + 1, n) - Vec::Ones(n);
    ++a.probes;
    if (index.count(lam(u)) == 0) ++a.uncovered;
  }
  const Parallelogram doubled = dilate(domain, 2.0);
  for (const auto& R : regions)
    for (const Vec& v : R.vertices())
      if (!doubled.contains_point(v, 1e-9)) a.contained = false;
  a.min_dimension = std::numeric_limits<double>::infinity();
  for (const auto& c : out.cells) {
    a.min_dimension = std::min(a.min_dimension, c.region.min_side());
    a.max_flat_ratio = std::max(a.max_flat_ratio, c.witness.bound / delta);
  }
  a.dimension_ok = a.min_dimension >= dim_floor * (1 - 1e-12);
  a.flatness_ok = a.max_flat_ratio <= flat_C;
  if (a.uncovered) a.failing = "coverage";
  else if (!a.contained) a.failing = "containment";
  else if (!a.dimension_ok) a.failing = "dimension";
  else if (!a.flatness_ok) a.failing = "flatness";
  return a;
}

}  // namespace flatcover
