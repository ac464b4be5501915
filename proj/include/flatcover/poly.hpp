#pragma once

#include <utility>
#include <vector>

#include "flatcover/geom.hpp"

namespace flatcover {

using MultiIndex = std::vector<int>;

// Monomials of k variables with |alpha| <= d: degree ascending, then lexicographically descending
// (x^2, xy, y^2 for k=2).
const std::vector<MultiIndex>& monomials(int k, int d);
int monomial_index(const MultiIndex& alpha, int d);
long binom(int n, int r);
inline int num_monomials(int k, int d) { return static_cast<int>(binom(k + d, k)); }

class PolyScalar {
 public:
  PolyScalar() = default;
  PolyScalar(int k, int d);
  PolyScalar(int k, int d, Vec coeffs);

  static PolyScalar constant(int k, int d, double c);
  static PolyScalar variable(int k, int d, int i);
  static PolyScalar monomial(int k, int d, const MultiIndex& alpha, double c = 1.0);

  int k() const { return k_; }
  int d() const { return d_; }
  const Vec& coeffs() const { return c_; }
  Vec& coeffs() { return c_; }
  double coeff(const MultiIndex& alpha) const;
  void set_coeff(const MultiIndex& alpha, double c);
  // Largest |alpha| with a nonzero coefficient (-1 for zero).
  int true_degree() const;

  double eval(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hessian(const Vec& x) const;
  double hessian_form(const Vec& x, const Vec& v) const;

  PolyScalar derivative(int i) const;
  // Same polynomial stored with degree bound d2 (truncates if d2 < d).
  PolyScalar with_degree(int d2) const;

  PolyScalar operator+(const PolyScalar& o) const;
  PolyScalar operator-(const PolyScalar& o) const;
  PolyScalar operator*(const PolyScalar& o) const;
  PolyScalar operator*(double s) const;
  PolyScalar& operator+=(const PolyScalar& o);

  double max_abs_coeff() const { return c_.size() ? c_.cwiseAbs().maxCoeff() : 0.0; }
  double sum_abs_coeff() const { return c_.cwiseAbs().sum(); }

 private:
  int k_ = 0, d_ = 0;
  Vec c_;
};

// Exact composition x -> P(A x + b), A: k x k' (result has k' variables).
PolyScalar compose_affine(const PolyScalar& P, const AffineMap& lam);

class PolyMap {
 public:
  PolyMap() = default;
  explicit PolyMap(std::vector<PolyScalar> comps);

  int k() const { return comps_.front().k(); }
  int d() const { return comps_.front().d(); }
  int l() const { return static_cast<int>(comps_.size()); }
  const PolyScalar& operator[](int i) const { return comps_[i]; }
  PolyScalar& operator[](int i) { return comps_[i]; }
  const std::vector<PolyScalar>& components() const { return comps_; }

  Vec eval(const Vec& x) const;
  Mat jacobian(const Vec& x) const;  // l x k
  Vec hessian_form(const Vec& x, const Vec& v) const;

 private:
  std::vector<PolyScalar> comps_;
};

PolyMap compose_affine(const PolyMap& P, const AffineMap& lam);
// U P + L for an l2 x l matrix U and an affine L: R^k -> R^l2.
PolyMap linear_combine(const Mat& U, const PolyMap& P, const AffineMap* L = nullptr);

struct SupBounds {
  double lower;
  double upper;
};

// Chebyshev-Lobatto nodes cos(pi j/(m-1)), j = 0..m-1.
std::vector<double> cheb_nodes(int m);
// Tensor Chebyshev grid on [-1,1]^k; per-axis count reduced so the total stays below cap.
std::vector<Vec> cheb_grid(int k, int per_axis = 33, int cap = 40000);

SupBounds sup_norm_bounds(const PolyScalar& P, const Parallelogram& R, int per_axis = 33);

Vec coeff_iso(const PolyMap& phi);
PolyMap coeff_iso_inv(const Vec& v, int k, int d, int l);

struct MinimaxFit {
  Mat theta;
  double err;
};

// min over theta of max_j |Y_j - X_j theta| (Euclidean row norms). Column 0 of X must be constant:
// Lawson reweighting, each step followed by an exact recentering of the constant row.
MinimaxFit minimax_fit(const Mat& X, const Mat& Y, int iters = 40);
// Center of the smallest ball around the rows of P (exact for one column, iterative otherwise).
Vec ball_center(const Mat& P);
double sup_rows(const Mat& P);

struct AffineFit {
  AffineMap L;  // R^k -> R
  double err;
};

AffineFit best_affine_fit(const PolyScalar& P, const Parallelogram& R, int per_axis = 33, int polish_iters = 40);

// Empirical C(k,d): max over random sign patterns of max|c| / grid sup on [-1,1]^k. Cached.
double polycoeff_constant(int k, int d);

}  // namespace flatcover
