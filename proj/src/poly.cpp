#include "flatcover/poly.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>

namespace flatcover {

long binom(int n, int r) {
  if (r < 0 || r > n) return 0;
  long out = 1;
  for (int i = 1; i <= r; ++i) out = out * (n - r + i) / i;
  return out;
}

namespace {

void gen_degree(int k, int t, int pos, MultiIndex& cur, std::vector<MultiIndex>& out) {
  if (pos == k - 1) {
    cur[pos] = t;
    out.push_back(cur);
    return;
  }
  for (int v = t; v >= 0; --v) {
    cur[pos] = v;
    gen_degree(k, t - v, pos + 1, cur, out);
  }
}

// Number of compositions of t into p nonnegative parts.
long compositions(int t, int p) {
  if (p == 0) return t == 0 ? 1 : 0;
  return binom(t + p - 1, p - 1);
}

// Multiply truncated at total degree dmax, with all operands in k variables.
Vec mul_trunc(const Vec& a, const Vec& b, int k, int dmax) {
  const auto& ma = monomials(k, dmax);
  Vec out = Vec::Zero(num_monomials(k, dmax));
  MultiIndex s(k);
  for (int i = 0; i < a.size(); ++i) {
    if (a(i) == 0.0) continue;
    const int di = std::accumulate(ma[i].begin(), ma[i].end(), 0);
    for (int j = 0; j < b.size(); ++j) {
      if (b(j) == 0.0) continue;
      const int dj = std::accumulate(ma[j].begin(), ma[j].end(), 0);
      if (di + dj > dmax) break;  // degrees ascend within b
      for (int q = 0; q < k; ++q) s[q] = ma[i][q] + ma[j][q];
      out(monomial_index(s, dmax)) += a(i) * b(j);
    }
  }
  return out;
}

}  // namespace

const std::vector<MultiIndex>& monomials(int k, int d) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::vector<MultiIndex>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(k, d);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<MultiIndex> out;
  MultiIndex cur(k, 0);
  if (k == 0) {
    out.push_back(cur);
  } else {
    for (int t = 0; t <= d; ++t) gen_degree(k, t, 0, cur, out);
  }
  return cache.emplace(key, std::move(out)).first->second;
}

int monomial_index(const MultiIndex& alpha, int d) {
  const int k = static_cast<int>(alpha.size());
  int t = 0;
  for (int a : alpha) {
    if (a < 0) return -1;
    t += a;
  }
  if (t > d) return -1;
  long idx = t == 0 ? 0 : binom(k + t - 1, k);  // monomials of degree < t
  int rem = t;
  for (int i = 0; i < k - 1; ++i) {
    for (int v = rem; v > alpha[i]; --v) idx += compositions(rem - v, k - i - 1);
    rem -= alpha[i];
  }
  return static_cast<int>(idx);
}

PolyScalar::PolyScalar(int k, int d) : k_(k), d_(d), c_(Vec::Zero(num_monomials(k, d))) {}

PolyScalar::PolyScalar(int k, int d, Vec coeffs) : k_(k), d_(d), c_(std::move(coeffs)) {
  if (c_.size() != num_monomials(k, d)) throw Error(ErrorKind::DimMismatch, "coefficient vector length");
}

PolyScalar PolyScalar::constant(int k, int d, double c) {
  PolyScalar p(k, d);
  p.c_(0) = c;
  return p;
}

PolyScalar PolyScalar::variable(int k, int d, int i) {
  MultiIndex a(k, 0);
  a[i] = 1;
  return monomial(k, d, a);
}

PolyScalar PolyScalar::monomial(int k, int d, const MultiIndex& alpha, double c) {
  PolyScalar p(k, d);
  p.set_coeff(alpha, c);
  return p;
}

double PolyScalar::coeff(const MultiIndex& alpha) const {
  if (static_cast<int>(alpha.size()) != k_) throw Error(ErrorKind::DimMismatch, "multi-index length");
  const int i = monomial_index(alpha, d_);
  return i < 0 ? 0.0 : c_(i);
}

void PolyScalar::set_coeff(const MultiIndex& alpha, double c) {
  if (static_cast<int>(alpha.size()) != k_) throw Error(ErrorKind::DimMismatch, "multi-index length");
  const int i = monomial_index(alpha, d_);
  if (i < 0) throw Error(ErrorKind::BadDimension, "monomial exceeds degree bound");
  c_(i) = c;
}

int PolyScalar::true_degree() const {
  const auto& ms = monomials(k_, d_);
  for (int i = static_cast<int>(c_.size()) - 1; i >= 0; --i)
    if (c_(i) != 0.0) return std::accumulate(ms[i].begin(), ms[i].end(), 0);
  return -1;
}

namespace {

Mat power_table(const Vec& x, int d) {
  Mat pw(x.size(), d + 1);
  for (int i = 0; i < x.size(); ++i) {
    pw(i, 0) = 1.0;
    for (int p = 1; p <= d; ++p) pw(i, p) = pw(i, p - 1) * x(i);
  }
  return pw;
}

}  // namespace

double PolyScalar::eval(const Vec& x) const {
  if (x.size() != k_) throw Error(ErrorKind::DimMismatch, "eval point dimension");
  const Mat pw = power_table(x, d_);
  const auto& ms = monomials(k_, d_);
  double s = 0;
  for (int i = 0; i < c_.size(); ++i) {
    if (c_(i) == 0.0) continue;
    double t = c_(i);
    for (int q = 0; q < k_; ++q) t *= pw(q, ms[i][q]);
    s += t;
  }
  return s;
}

Vec PolyScalar::grad(const Vec& x) const {
  if (x.size() != k_) throw Error(ErrorKind::DimMismatch, "grad point dimension");
  const Mat pw = power_table(x, d_);
  const auto& ms = monomials(k_, d_);
  Vec g = Vec::Zero(k_);
  for (int i = 0; i < c_.size(); ++i) {
    if (c_(i) == 0.0) continue;
    for (int a = 0; a < k_; ++a) {
      if (ms[i][a] == 0) continue;
      double t = c_(i) * ms[i][a];
      for (int q = 0; q < k_; ++q) t *= pw(q, ms[i][q] - (q == a ? 1 : 0));
      g(a) += t;
    }
  }
  return g;
}

Mat PolyScalar::hessian(const Vec& x) const {
  if (x.size() != k_) throw Error(ErrorKind::DimMismatch, "hessian point dimension");
  const Mat pw = power_table(x, d_);
  const auto& ms = monomials(k_, d_);
  Mat H = Mat::Zero(k_, k_);
  MultiIndex e(k_);
  for (int i = 0; i < c_.size(); ++i) {
    if (c_(i) == 0.0) continue;
    for (int a = 0; a < k_; ++a) {
      for (int b = a; b < k_; ++b) {
        e = ms[i];
        double t = c_(i) * e[a];
        e[a] -= 1;
        t *= e[b];
        e[b] -= 1;
        if (t == 0.0) continue;
        for (int q = 0; q < k_; ++q) t *= pw(q, e[q]);
        H(a, b) += t;
        if (a != b) H(b, a) += t;
      }
    }
  }
  return H;
}

double PolyScalar::hessian_form(const Vec& x, const Vec& v) const {
  if (v.size() != k_) throw Error(ErrorKind::DimMismatch, "direction dimension");
  return v.dot(hessian(x) * v);
}

PolyScalar PolyScalar::derivative(int a) const {
  PolyScalar out(k_, d_);
  const auto& ms = monomials(k_, d_);
  MultiIndex e(k_);
  for (int i = 0; i < c_.size(); ++i) {
    if (ms[i][a] == 0 || c_(i) == 0.0) continue;
    e = ms[i];
    e[a] -= 1;
    out.c_(monomial_index(e, d_)) += c_(i) * ms[i][a];
  }
  return out;
}

PolyScalar PolyScalar::with_degree(int d2) const {
  PolyScalar out(k_, d2);
  const int m = std::min(num_monomials(k_, d_), num_monomials(k_, d2));
  out.c_.head(m) = c_.head(m);
  return out;
}

PolyScalar PolyScalar::operator+(const PolyScalar& o) const {
  PolyScalar r = *this;
  r += o;
  return r;
}

PolyScalar& PolyScalar::operator+=(const PolyScalar& o) {
  if (o.k_ != k_) throw Error(ErrorKind::DimMismatch, "polynomial sum");
  if (o.d_ > d_) *this = with_degree(o.d_);
  c_.head(o.c_.size()) += o.c_;
  return *this;
}

PolyScalar PolyScalar::operator-(const PolyScalar& o) const { return *this + o * -1.0; }

PolyScalar PolyScalar::operator*(double s) const {
  PolyScalar r = *this;
  r.c_ *= s;
  return r;
}

PolyScalar PolyScalar::operator*(const PolyScalar& o) const {
  if (o.k_ != k_) throw Error(ErrorKind::DimMismatch, "polynomial product");
  const int dd = d_ + o.d_;
  return PolyScalar(k_, dd, mul_trunc(with_degree(dd).c_, o.with_degree(dd).c_, k_, dd));
}

PolyScalar compose_affine(const PolyScalar& P, const AffineMap& lam) {
  const int k = P.k(), d = P.d();
  if (lam.out_dim() != k) throw Error(ErrorKind::DimMismatch, "compose_affine");
  const int kp = lam.in_dim();
  const int M = num_monomials(kp, d);
  // pw[i][p] = (A_i . y + b_i)^p
  std::vector<std::vector<Vec>> pw(k, std::vector<Vec>(d + 1));
  for (int i = 0; i < k; ++i) {
    Vec lin = Vec::Zero(M);
    lin(0) = lam.offset(i);
    for (int j = 0; j < kp && d >= 1; ++j) {
      MultiIndex e(kp, 0);
      e[j] = 1;
      lin(monomial_index(e, d)) = lam.matrix(i, j);
    }
    pw[i][0] = Vec::Zero(M);
    pw[i][0](0) = 1.0;
    for (int p = 1; p <= d; ++p) pw[i][p] = mul_trunc(pw[i][p - 1], lin, kp, d);
  }
  const auto& ms = monomials(k, d);
  Vec out = Vec::Zero(M);
  for (int a = 0; a < P.coeffs().size(); ++a) {
    const double c = P.coeffs()(a);
    if (c == 0.0) continue;
    Vec term = pw[0][ms[a][0]];
    for (int i = 1; i < k; ++i)
      if (ms[a][i] > 0) term = mul_trunc(term, pw[i][ms[a][i]], kp, d);
    out += c * term;
  }
  return PolyScalar(kp, d, out);
}

PolyMap::PolyMap(std::vector<PolyScalar> comps) : comps_(std::move(comps)) {
  if (comps_.empty()) throw Error(ErrorKind::DimMismatch, "empty polynomial map");
  for (const auto& c : comps_)
    if (c.k() != comps_[0].k() || c.d() != comps_[0].d())
      throw Error(ErrorKind::DimMismatch, "components must share k and d");
}

Vec PolyMap::eval(const Vec& x) const {
  Vec out(l());
  for (int i = 0; i < l(); ++i) out(i) = comps_[i].eval(x);
  return out;
}

Mat PolyMap::jacobian(const Vec& x) const {
  Mat J(l(), k());
  for (int i = 0; i < l(); ++i) J.row(i) = comps_[i].grad(x).transpose();
  return J;
}

Vec PolyMap::hessian_form(const Vec& x, const Vec& v) const {
  Vec out(l());
  for (int i = 0; i < l(); ++i) out(i) = comps_[i].hessian_form(x, v);
  return out;
}

PolyMap compose_affine(const PolyMap& P, const AffineMap& lam) {
  std::vector<PolyScalar> out;
  for (const auto& c : P.components()) out.push_back(compose_affine(c, lam));
  return PolyMap(std::move(out));
}

PolyMap linear_combine(const Mat& U, const PolyMap& P, const AffineMap* L) {
  if (U.cols() != P.l()) throw Error(ErrorKind::DimMismatch, "linear_combine");
  std::vector<PolyScalar> out;
  for (int i = 0; i < U.rows(); ++i) {
    PolyScalar s(P.k(), P.d());
    for (int j = 0; j < P.l(); ++j) s.coeffs() += U(i, j) * P[j].coeffs();
    if (L) {
      s.coeffs()(0) += L->offset(i);
      for (int j = 0; j < P.k() && P.d() >= 1; ++j) s.coeffs()(1 + j) += L->matrix(i, j);
    }
    out.push_back(std::move(s));
  }
  return PolyMap(std::move(out));
}

std::vector<double> cheb_nodes(int m) {
  std::vector<double> out(m);
  if (m == 1) {
    out[0] = 0.0;
    return out;
  }
  for (int j = 0; j < m; ++j) out[j] = std::cos(M_PI * j / (m - 1));
  if (m % 2 == 1) out[(m - 1) / 2] = 0.0;
  return out;
}

std::vector<Vec> cheb_grid(int k, int per_axis, int cap) {
  int m = per_axis;
  while (m > 3 && std::pow(double(m), k) > cap) --m;
  const std::vector<double> nodes = cheb_nodes(m);
  std::vector<Vec> out;
  std::vector<int> idx(k, 0);
  while (true) {
    Vec x(k);
    for (int i = 0; i < k; ++i) x(i) = nodes[idx[i]];
    out.push_back(x);
    int i = 0;
    while (i < k && ++idx[i] == m) idx[i++] = 0;
    if (i == k) break;
  }
  return out;
}

SupBounds sup_norm_bounds(const PolyScalar& P, const Parallelogram& R, int per_axis) {
  if (R.dim() != P.k()) throw Error(ErrorKind::DimMismatch, "sup_norm_bounds");
  const PolyScalar Q = compose_affine(P, R.to_affine());
  double lo = 0;
  for (const Vec& u : cheb_grid(P.k(), per_axis)) lo = std::max(lo, std::abs(Q.eval(u)));
  return {lo, Q.sum_abs_coeff()};
}

Vec coeff_iso(const PolyMap& phi) {
  const int M = num_monomials(phi.k(), phi.d());
  Vec out(M * phi.l());
  for (int i = 0; i < phi.l(); ++i) out.segment(i * M, M) = phi[i].coeffs();
  return out;
}

PolyMap coeff_iso_inv(const Vec& v, int k, int d, int l) {
  const int M = num_monomials(k, d);
  if (v.size() != static_cast<long>(M) * l) throw Error(ErrorKind::DimMismatch, "coefficient vector length");
  std::vector<PolyScalar> comps;
  for (int i = 0; i < l; ++i) comps.emplace_back(k, d, Vec(v.segment(i * M, M)));
  return PolyMap(std::move(comps));
}

// Center of the smallest ball around the rows of P (exact for one column).
Vec ball_center(const Mat& P) {
  const int r = static_cast<int>(P.cols());
  if (r == 1) {
    Vec c(1);
    c(0) = 0.5 * (P.col(0).maxCoeff() + P.col(0).minCoeff());
    return c;
  }
  Vec c = P.colwise().mean().transpose();
  for (int t = 1; t <= 400; ++t) {
    Eigen::Index far;
    (P.rowwise() - c.transpose()).rowwise().squaredNorm().maxCoeff(&far);
    c += (P.row(far).transpose() - c) / (t + 1.0);
  }
  return c;
}

double sup_rows(const Mat& P) { return P.rows() ? std::sqrt(P.rowwise().squaredNorm().maxCoeff()) : 0.0; }

MinimaxFit minimax_fit(const Mat& X, const Mat& Y, int iters) {
  const long G = X.rows();
  const int p = static_cast<int>(X.cols());
  auto recenter = [&](Mat& th) {
    Mat R = Y - X * th;
    th.row(0) += ball_center(R).transpose();
    return sup_rows(Y - X * th);
  };
  Mat XtX = X.transpose() * X;
  Mat theta = XtX.ldlt().solve(X.transpose() * Y);
  if (!theta.allFinite()) theta = X.colPivHouseholderQr().solve(Y);
  MinimaxFit best{theta, recenter(theta)};
  theta = best.theta;
  Vec w = Vec::Constant(G, 1.0 / G);
  for (int it = 0; it < iters && best.err > 0; ++it) {
    Vec r = (Y - X * theta).rowwise().norm();
    w = w.cwiseProduct(r);
    const double s = w.sum();
    if (!(s > 0)) break;
    w /= s;
    Mat XtW = X.transpose() * w.asDiagonal();
    Mat A = XtW * X + 1e-300 * Mat::Identity(p, p);
    theta = A.ldlt().solve(XtW * Y);
    if (!theta.allFinite()) break;
    const double e = recenter(theta);
    if (e < best.err) best = {theta, e};
  }
  return best;
}

AffineFit best_affine_fit(const PolyScalar& P, const Parallelogram& R, int per_axis, int polish_iters) {
  const int k = P.k();
  if (R.dim() != k) throw Error(ErrorKind::DimMismatch, "best_affine_fit");
  if (R.half_lengths.minCoeff() < 1e-12) throw Error(ErrorKind::BadRegion, "degenerate region");
  const PolyScalar Q = compose_affine(P, R.to_affine());
  const std::vector<Vec> grid = cheb_grid(k, per_axis);
  const int G = static_cast<int>(grid.size());
  Mat X(G, k + 1);
  Mat y(G, 1);
  for (int g = 0; g < G; ++g) {
    X(g, 0) = 1.0;
    X.row(g).tail(k) = grid[g].transpose();
    y(g, 0) = Q.eval(grid[g]);
  }
  const MinimaxFit fit = minimax_fit(X, y, polish_iters);
  const Vec best = fit.theta.col(0);
  // Back to original coordinates: u = E^{-1}(x - c).
  const AffineMap inv = R.to_affine().inverse();
  Mat A = best.tail(k).transpose() * inv.matrix;
  Vec b(1);
  b(0) = best(0) + best.tail(k).dot(inv.offset);
  return {AffineMap(A, b), fit.err};
}

double polycoeff_constant(int k, int d) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, double> cache;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find({k, d});
    if (it != cache.end()) return it->second;
  }
  std::mt19937_64 rng(1234 + 97 * k + d);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> mag(0.0, 1.0);
  const auto grid = cheb_grid(k, 17);
  double best = 1.0;
  const int M = num_monomials(k, d);
  for (int t = 0; t < 200; ++t) {
    Vec c(M);
    for (int i = 0; i < M; ++i) c(i) = (coin(rng) ? 1.0 : -1.0) * (t % 2 ? mag(rng) : 1.0);
    PolyScalar p(k, d, c);
    double sup = 0;
    for (const Vec& u : grid) sup = std::max(sup, std::abs(p.eval(u)));
    if (sup > 0) best = std::max(best, p.max_abs_coeff() / sup);
  }
  std::lock_guard<std::mutex> lock(mu);
  cache[{k, d}] = best;
  return best;
}

}  // namespace flatcover
