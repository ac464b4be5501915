#include "flatcover/degen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace flatcover {

DegDet DegDet::coeff_map(PolyMap Q, int out_k, int out_d) {
  DegDet H;
  H.kind = DetKind::CoeffMap;
  H.out_k = out_k;
  H.out_d = out_d;
  H.Dprime = std::max(1, Q.d());
  H.Q = std::move(Q);
  return H;
}

double grid_sup(const PolyScalar& p, int per_axis) {
  double s = 0;
  for (const Vec& u : cheb_grid(p.k(), per_axis)) s = std::max(s, std::abs(p.eval(u)));
  return s;
}

double grid_sup(const PolyMap& p, int per_axis) {
  double s = 0;
  for (const Vec& u : cheb_grid(p.k(), per_axis)) s = std::max(s, p.eval(u).norm());
  return s;
}

namespace {

std::vector<std::vector<int>> permutations(int s) {
  std::vector<int> p(s);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<int>> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

int perm_sign(const std::vector<int>& p) {
  int sgn = 1;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      if (p[i] > p[j]) sgn = -sgn;
  return sgn;
}

// Leibniz expansion over a matrix of polynomials; result stored with degree bound dout.
PolyScalar det_poly(const std::vector<std::vector<PolyScalar>>& M, int k, int dout) {
  const int s = static_cast<int>(M.size());
  PolyScalar out(k, dout);
  for (const auto& p : permutations(s)) {
    PolyScalar term = M[0][p[0]];
    for (int i = 1; i < s; ++i) term = (term * M[i][p[i]]).with_degree(dout);
    out += term.with_degree(dout) * static_cast<double>(perm_sign(p));
  }
  return out.with_degree(dout);
}

long falling(int p, int j) {
  long r = 1;
  for (int i = 0; i < j; ++i) r *= (p - i);
  return r;
}

// Polynomial in x (k variables, degree bound D) whose coefficients are sparse polynomials in u.
using UPoly = std::map<std::vector<int>, double>;  // sorted variable multiset -> coefficient

struct XPoly {
  int k = 1, D = 0;
  std::vector<UPoly> c;
  XPoly(int k_, int D_) : k(k_), D(D_), c(num_monomials(k_, D_)) {}
};

XPoly xmul(const XPoly& a, const XPoly& b) {
  XPoly out(a.k, a.D + b.D);
  const auto& ma = monomials(a.k, a.D);
  const auto& mb = monomials(b.k, b.D);
  MultiIndex s(a.k);
  for (std::size_t i = 0; i < a.c.size(); ++i) {
    if (a.c[i].empty()) continue;
    for (std::size_t j = 0; j < b.c.size(); ++j) {
      if (b.c[j].empty()) continue;
      for (int q = 0; q < a.k; ++q) s[q] = ma[i][q] + mb[j][q];
      UPoly& dst = out.c[monomial_index(s, out.D)];
      for (const auto& [ka, va] : a.c[i])
        for (const auto& [kb, vb] : b.c[j]) {
          std::vector<int> key(ka.size() + kb.size());
          std::merge(ka.begin(), ka.end(), kb.begin(), kb.end(), key.begin());
          dst[key] += va * vb;
        }
    }
  }
  return out;
}

void xadd(XPoly& acc, const XPoly& t, double s) {
  for (std::size_t i = 0; i < t.c.size(); ++i)
    for (const auto& [key, v] : t.c[i]) acc.c[i][key] += s * v;
}

XPoly xdet(const std::vector<std::vector<XPoly>>& M) {
  const int s = static_cast<int>(M.size());
  XPoly out(M[0][0].k, M[0][0].D * s);
  for (const auto& p : permutations(s)) {
    XPoly term = M[0][p[0]];
    for (int i = 1; i < s; ++i) term = xmul(term, M[i][p[i]]);
    xadd(out, term, perm_sign(p));
  }
  return out;
}

PolyMap xpoly_to_map(const XPoly& x, int N, int Dp) {
  std::vector<PolyScalar> comps;
  for (const UPoly& up : x.c) {
    PolyScalar q(N, Dp);
    for (const auto& [key, v] : up) {
      if (v == 0.0) continue;
      MultiIndex a(N, 0);
      for (int var : key) a[var] += 1;
      q.set_coeff(a, q.coeff(a) + v);
    }
    comps.push_back(std::move(q));
  }
  return PolyMap(std::move(comps));
}

}  // namespace

PolyScalar hessian_det(const PolyScalar& phi) {
  const int k = phi.k();
  if (k < 1) throw Error(ErrorKind::BadDimension, "hessian_det needs k >= 1");
  const int de = std::max(0, phi.d() - 2);
  std::vector<std::vector<PolyScalar>> M(k, std::vector<PolyScalar>(k));
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) M[a][b] = phi.derivative(a).derivative(b).with_degree(de);
  return det_poly(M, k, k * de);
}

PolyScalar wronskian_gram(const PolyMap& curve, int m) {
  if (curve.k() != 1) throw Error(ErrorKind::BadDimension, "wronskian_gram needs a curve (k = 1)");
  const int l = curve.l();
  if (m < 1 || m > l) throw Error(ErrorKind::BadDimension, "wronskian order must satisfy 1 <= m <= n-1");
  const int de = std::max(0, curve.d() - 2);
  std::vector<std::vector<PolyScalar>> W(m, std::vector<PolyScalar>(l));
  for (int c = 0; c < l; ++c) {
    PolyScalar dp = curve[c].derivative(0);
    for (int j = 0; j < m; ++j) {
      dp = dp.derivative(0);
      W[j][c] = dp.with_degree(de);
    }
  }
  std::vector<std::vector<PolyScalar>> G(m, std::vector<PolyScalar>(m));
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      PolyScalar s(1, 2 * de);
      for (int c = 0; c < l; ++c) s += (W[a][c] * W[b][c]).with_degree(2 * de);
      G[a][b] = s;
    }
  return det_poly(G, 1, 2 * m * de);
}

PolyScalar apply_det(const DegDet& H, const PolyMap& phi) {
  switch (H.kind) {
    case DetKind::HessianDet:
      if (phi.l() != 1) throw Error(ErrorKind::BadDimension, "HessianDet acts on hypersurfaces (l = 1)");
      return hessian_det(phi[0]);
    case DetKind::WronskianGram:
      return wronskian_gram(phi, H.m);
    case DetKind::CoeffMap: {
      const Vec q = H.Q->eval(coeff_iso(phi));
      if (q.size() != num_monomials(H.out_k, H.out_d))
        throw Error(ErrorKind::DimMismatch, "coefficient map output size");
      return PolyScalar(H.out_k, H.out_d, q);
    }
  }
  throw Error(ErrorKind::Internal, "unknown determinant kind");
}

int det_degree(const DegDet& H, int k) {
  switch (H.kind) {
    case DetKind::HessianDet: return k;
    case DetKind::WronskianGram: return 2 * H.m;
    case DetKind::CoeffMap: return H.Dprime;
  }
  return 1;
}

PolyMap induced_coeff_map(const DegDet& H, int k, int d, int l) {
  const int M = num_monomials(k, d);
  const int N = l * M;
  if (N > kCoeffMapGuard) throw Error(ErrorKind::BadParam, "coefficient space too large for symbolic expansion");
  if (H.kind == DetKind::CoeffMap) return *H.Q;
  const auto& ms = monomials(k, d);
  const int de = std::max(0, d - 2);
  if (H.kind == DetKind::HessianDet) {
    if (l != 1) throw Error(ErrorKind::BadDimension, "HessianDet acts on hypersurfaces (l = 1)");
    std::vector<std::vector<XPoly>> E(k, std::vector<XPoly>(k, XPoly(k, de)));
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int i = 0; i < M; ++i) {
          MultiIndex e = ms[i];
          double c = e[a];
          e[a] -= 1;
          c *= e[b];
          e[b] -= 1;
          if (c == 0.0) continue;
          E[a][b].c[monomial_index(e, de)][{i}] += c;
        }
    return xpoly_to_map(xdet(E), N, k);
  }
  // WronskianGram
  if (k != 1) throw Error(ErrorKind::BadDimension, "wronskian_gram needs a curve (k = 1)");
  const int m = H.m;
  if (m < 1 || m > l) throw Error(ErrorKind::BadDimension, "wronskian order out of range");
  std::vector<std::vector<XPoly>> W(m, std::vector<XPoly>(l, XPoly(1, de)));
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < l; ++c)
      for (int p = j + 2; p <= d; ++p) W[j][c].c[p - j - 2][{c * M + p}] += static_cast<double>(falling(p, j + 2));
  std::vector<std::vector<XPoly>> G(m, std::vector<XPoly>(m, XPoly(1, 2 * de)));
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      for (int c = 0; c < l; ++c) xadd(G[a][b], xmul(W[a][c], W[b][c]), 1.0);
  return xpoly_to_map(xdet(G), N, 2 * m);
}

namespace {

Vec eval_map(const PolyMap& Q, const Vec& u) { return Q.eval(u); }

Vec newton_polish(const PolyMap& Q, Vec u, int iters, double tol) {
  double prev = eval_map(Q, u).norm();
  for (int it = 0; it < iters && prev > tol; ++it) {
    const Mat J = Q.jacobian(u);
    const Vec q = eval_map(Q, u);
    Vec step = J.completeOrthogonalDecomposition().solve(q);
    if (!step.allFinite()) break;
    Vec un = u - step;
    const double cur = eval_map(Q, un).norm();
    if (!(cur < prev)) {
      // Halve once before giving up.
      un = u - 0.5 * step;
      const double half = eval_map(Q, un).norm();
      if (!(half < prev)) break;
      u = un;
      prev = half;
      continue;
    }
    u = un;
    prev = cur;
  }
  return u;
}

}  // namespace

Vec project_to_variety(const PolyMap& Q, const Vec& u0, int iters) {
  Vec u = u0;
  const int N = static_cast<int>(u0.size());
  const int steps = std::max(1, iters / 10);
  for (double rho = 1.0; rho <= 1e8; rho *= 10.0) {
    for (int it = 0; it < steps; ++it) {
      const Mat J = Q.jacobian(u);
      const Vec q = eval_map(Q, u);
      Mat A = Mat::Identity(N, N) + rho * J.transpose() * J;
      Vec g = (u - u0) + rho * J.transpose() * q;
      Vec step = A.ldlt().solve(g);
      if (!step.allFinite()) break;
      u -= step;
    }
  }
  return newton_polish(Q, u, 400, 1e-22);
}

ClosureResult scaling_closure_check(const DegDet& H, int k, int d, int l, int samples, std::uint64_t seed) {
  const PolyMap Q = H.kind == DetKind::CoeffMap ? *H.Q : induced_coeff_map(H, k, d, l);
  const int N = Q.k();
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> g;
  ClosureResult res;
  const double cs[] = {-2.0, -1.0, 0.5, 3.0};
  for (int s = 0; s < samples; ++s) {
    Vec u0(N);
    for (int i = 0; i < N; ++i) u0(i) = g(rng);
    const Vec u = project_to_variety(Q, u0);
    if (Q.eval(u).cwiseAbs().maxCoeff() > 1e-10) continue;
    ++res.tested;
    for (double c : cs) {
      if (Q.eval(c * u).cwiseAbs().maxCoeff() > 1e-8) {
        res.ok = false;
        res.witness_u = u;
        res.witness_c = c;
        return res;
      }
    }
  }
  return res;
}

double lipschitz_constant(const DegDet& H, const PolyMap& phi) {
  const PolyScalar h = apply_det(H, phi);
  double s = 0;
  for (int i = 0; i < h.k(); ++i) {
    const double gi = h.derivative(i).sum_abs_coeff();
    s += gi * gi;
  }
  return std::sqrt(s);
}

int rescale_exponent(const DegDet& H, int k) {
  switch (H.kind) {
    case DetKind::HessianDet: return 2 * k;
    case DetKind::WronskianGram: return H.m * (H.m + 3);
    case DetKind::CoeffMap: break;
  }
  throw Error(ErrorKind::BadParam, "no closed-form rescaling exponent for coefficient maps");
}

RescaleCheck rescale_regularity_check(const DegDet& H, const PolyMap& phi, const AffineMap& lam, double mu) {
  const int k = phi.k();
  if (!(mu > 0 && mu <= 1)) throw Error(ErrorKind::BadFactor, "mu must lie in (0,1]");
  const PolyScalar h = apply_det(H, phi);
  const PolyScalar hl = apply_det(H, compose_affine(phi, lam));
  const int C = rescale_exponent(H, k);
  const double muC = std::pow(mu, C);
  RescaleCheck out;
  out.ratio_min = std::numeric_limits<double>::infinity();
  out.ratio_max = 0;
  out.C_emp = -std::numeric_limits<double>::infinity();
  double scale = 0;
  const auto grid = cheb_grid(k, 17);
  for (const Vec& x : grid) scale = std::max(scale, std::abs(h.eval(lam(x))));
  for (const Vec& x : grid) {
    const double a = std::abs(h.eval(lam(x))), b = std::abs(hl.eval(x));
    if (muC * a > b * (1 + 1e-9) + 1e-12 * muC * scale) {
      out.pass = false;
      out.witness = x;
    }
    if (a > 1e-12 * scale && a > 0) {
      const double r = b / a;
      out.ratio_min = std::min(out.ratio_min, r);
      out.ratio_max = std::max(out.ratio_max, r);
      if (mu < 1) out.C_emp = std::max(out.C_emp, std::log(r) / std::log(mu));
    }
  }
  if (mu == 1) out.C_emp = 0;
  return out;
}

namespace {

double map_scale(const PolyMap& p) {
  double s = 0;
  for (const auto& c : p.components()) s = std::max(s, c.max_abs_coeff());
  return s;
}

// phi ~ g(a.x) + affine, fitted in sup norm on the grid.
std::pair<PolyScalar, double> ridge_fit(const PolyScalar& phi, const Vec& a, const std::vector<Vec>& grid,
                                        const Vec& y) {
  const int k = phi.k(), d = phi.d();
  Eigen::HouseholderQR<Mat> qr(a);
  const Mat Qfull = qr.householderQ() * Mat::Identity(k, k);
  const Mat perp = Qfull.rightCols(k - 1);
  const int p = d + 1 + (k - 1);
  Mat X(grid.size(), p);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double s = a.dot(grid[g]);
    double pw = 1.0;
    for (int j = 0; j <= d; ++j, pw *= s) X(g, j) = pw;
    X.row(g).tail(k - 1) = (perp.transpose() * grid[g]).transpose();
  }
  const MinimaxFit f = minimax_fit(X, y);
  PolyScalar gq(1, d, Vec(f.theta.col(0).head(d + 1)));
  Mat A(1, k);
  A.row(0) = a.transpose();
  PolyScalar psi = compose_affine(gq, AffineMap(A, Vec::Zero(1)));
  const Vec lin = perp * f.theta.col(0).tail(k - 1);
  for (int j = 0; j < k && d >= 1; ++j) psi.coeffs()(1 + j) += lin(j);
  return {psi, f.err};
}

std::vector<PolyMap> hessian_candidates(const PolyMap& phi, const ProjectOptions& o) {
  std::vector<PolyMap> out;
  const int k = phi.k(), d = phi.d();
  if (k == 1) {
    // phi'' = 0 means affine.
    auto f = best_affine_fit(phi[0], Parallelogram::cube(1));
    PolyScalar a(1, d);
    a.coeffs()(0) = f.L.offset(0);
    if (d >= 1) a.coeffs()(1) = f.L.matrix(0, 0);
    out.push_back(PolyMap({a}));
    return out;
  }
  const auto grid = cheb_grid(k, k == 2 ? 21 : 9);
  Vec y(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) y(g) = phi[0].eval(grid[g]);
  std::vector<Vec> dirs;
  if (k == 2) {
    for (int j = 0; j < o.directions; ++j) {
      Vec a(2);
      a << std::cos(M_PI * j / o.directions), std::sin(M_PI * j / o.directions);
      dirs.push_back(a);
    }
  } else {
    std::mt19937_64 rng(o.seed + 5);
    std::normal_distribution<double> g;
    for (int i = 0; i < k; ++i) dirs.push_back(Vec::Unit(k, i));
    for (int j = 0; j < o.directions; ++j) {
      Vec a(k);
      for (int i = 0; i < k; ++i) a(i) = g(rng);
      dirs.push_back(a.normalized());
    }
  }
  double best = std::numeric_limits<double>::infinity();
  Vec best_a = dirs[0];
  PolyScalar best_psi;
  for (const Vec& a : dirs) {
    auto [psi, err] = ridge_fit(phi[0], a, grid, y);
    if (err < best) {
      best = err;
      best_a = a;
      best_psi = psi;
    }
  }
  if (k == 2) {
    // Local angle refinement around the best grid direction.
    const double th0 = std::atan2(best_a(1), best_a(0));
    double step = M_PI / o.directions;
    double th = th0;
    for (int it = 0; it < 30; ++it) {
      bool moved = false;
      for (double cand : {th - step, th + step}) {
        Vec a(2);
        a << std::cos(cand), std::sin(cand);
        auto [psi, err] = ridge_fit(phi[0], a, grid, y);
        if (err < best) {
          best = err;
          best_psi = psi;
          th = cand;
          moved = true;
        }
      }
      if (!moved) step *= 0.5;
    }
  }
  out.push_back(PolyMap({best_psi}));
  return out;
}

std::vector<PolyMap> wronskian_candidates(const PolyMap& phi, int m) {
  const int l = phi.l(), d = phi.d();
  std::vector<PolyMap> out;
  if (d < 2) {
    out.push_back(phi);
    return out;
  }
  // Nonaffine coefficients t^2..t^d per component.
  Mat C(l, d - 1);
  for (int c = 0; c < l; ++c) C.row(c) = phi[c].coeffs().segment(2, d - 1).transpose();
  Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const int keep = std::min<int>(m - 1, static_cast<int>(svd.singularValues().size()));
  Mat Ck = Mat::Zero(l, d - 1);
  for (int i = 0; i < keep; ++i)
    Ck += svd.singularValues()(i) * svd.matrixU().col(i) * svd.matrixV().col(i).transpose();
  // Affine parts refit in sup norm against the residual.
  std::vector<PolyScalar> comps;
  for (int c = 0; c < l; ++c) {
    PolyScalar nonaff(1, d);
    nonaff.coeffs().segment(2, d - 1) = Ck.row(c).transpose();
    auto f = best_affine_fit(phi[c] - nonaff, Parallelogram::cube(1));
    nonaff.coeffs()(0) = f.L.offset(0);
    nonaff.coeffs()(1) = f.L.matrix(0, 0);
    comps.push_back(nonaff);
  }
  out.push_back(PolyMap(comps));
  return out;
}

}  // namespace

DegCert degenerate_project(const PolyMap& phi, const DegDet& H, double sigma, const ProjectOptions& o) {
  const int k = phi.k(), d = phi.d(), l = phi.l();
  const PolyScalar h = apply_det(H, phi);
  const double hs = grid_sup(h);
  if (o.check_sublevel && hs > sigma * (1 + 1e-9) + 1e-300)
    throw Error(ErrorKind::NotInSublevel, "sup |H phi| exceeds the requested level");

  std::vector<PolyMap> cands;
  std::vector<PolyScalar> zero;
  for (int i = 0; i < l; ++i) zero.emplace_back(k, d);
  cands.push_back(PolyMap(zero));
  cands.push_back(phi);
  if (H.kind == DetKind::HessianDet) {
    for (auto& c : hessian_candidates(phi, o)) cands.push_back(std::move(c));
  } else if (H.kind == DetKind::WronskianGram) {
    for (auto& c : wronskian_candidates(phi, H.m)) cands.push_back(std::move(c));
  }
  std::optional<PolyMap> Q;
  if (H.kind == DetKind::CoeffMap) {
    Q = *H.Q;
  } else if (l * num_monomials(k, d) <= kCoeffMapGuard && H.kind == DetKind::WronskianGram) {
    Q = induced_coeff_map(H, k, d, l);
  }
  if (Q) cands.push_back(coeff_iso_inv(project_to_variety(*Q, coeff_iso(phi), o.penalty_iters), k, d, l));

  const auto grid = cheb_grid(k, 33);
  DegCert best;
  best.sigma = sigma;
  best.err = std::numeric_limits<double>::infinity();
  for (const PolyMap& psi : cands) {
    double resid;
    if (H.kind == DetKind::CoeffMap) {
      resid = Q->eval(coeff_iso(psi)).cwiseAbs().maxCoeff();
      if (resid > 1e-9) continue;
    } else {
      const double sc = std::max(1.0, std::pow(map_scale(psi), det_degree(H, k)));
      resid = grid_sup(apply_det(H, psi));
      if (resid > 1e-8 * sc) continue;
    }
    double err = 0;
    for (const Vec& u : grid) err = std::max(err, (phi.eval(u) - psi.eval(u)).norm());
    if (err < best.err) {
      best.err = err;
      best.psi = psi;
      best.h_residual = resid;
    }
  }
  if (!std::isfinite(best.err)) throw Error(ErrorKind::ProjectionFailed, "no candidate satisfies H psi = 0");
  if (best.err > 0 && best.err < 1 && sigma > 0 && sigma < 1)
    best.beta_emp = std::log(best.err) / std::log(sigma);
  return best;
}

LojasiewiczFit lojasiewicz_probe(const PolyMap& S, int trials, std::uint64_t seed) {
  const int N = S.k();
  std::mt19937_64 rng(seed + 31);
  std::normal_distribution<double> g;
  std::vector<double> xs, ys;
  for (int t = 0; t < trials; ++t) {
    Vec u0(N);
    for (int i = 0; i < N; ++i) u0(i) = g(rng);
    const Vec z = project_to_variety(S, u0);
    if (S.eval(z).norm() > 1e-12) continue;
    Vec v(N);
    for (int i = 0; i < N; ++i) v(i) = g(rng);
    v.normalize();
    const double eps = std::pow(10.0, -1.0 - 3.0 * t / std::max(1, trials - 1));
    const Vec u = z + eps * v;
    const double s = S.eval(u).norm();
    const double dist = (u - project_to_variety(S, u)).norm();
    if (s > 1e-14 && dist > 1e-14) {
      xs.push_back(std::log(s));
      ys.push_back(std::log(dist));
    }
  }
  if (xs.size() < 5) throw Error(ErrorKind::InconclusiveFit, "too few usable probe points");
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  if (*mx - *mn < 1.0) throw Error(ErrorKind::InconclusiveFit, "insufficient spread in |S|");
  Mat X(xs.size(), 2);
  Vec y(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = xs[i];
    y(i) = ys[i];
  }
  const Vec th = X.colPivHouseholderQr().solve(y);
  if (!(th(1) > 0)) throw Error(ErrorKind::InconclusiveFit, "nonpositive fitted exponent");
  return {th(1), std::exp(th(0)), static_cast<int>(xs.size())};
}

}  // namespace flatcover
