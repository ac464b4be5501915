#pragma once

#include <cstdint>
#include <optional>

#include "flatcover/poly.hpp"

namespace flatcover {

enum class DetKind { HessianDet, WronskianGram, CoeffMap };

struct DegDet {
  DetKind kind = DetKind::HessianDet;
  int m = 0;  // WronskianGram order
  // CoeffMap only: Q on coefficient space, output read as coefficients of a (out_k, out_d) polynomial.
  std::optional<PolyMap> Q;
  int out_k = 1;
  int out_d = 0;
  int Dprime = 1;

  static DegDet hessian() { return {DetKind::HessianDet, 0, std::nullopt, 1, 0, 0}; }
  static DegDet wronskian(int m) { return {DetKind::WronskianGram, m, std::nullopt, 1, 0, 2 * m}; }
  static DegDet coeff_map(PolyMap Q, int out_k, int out_d);
};

// det D^2 phi, exact.
PolyScalar hessian_det(const PolyScalar& phi);
// det(W W^T), rows of W are phi'', ..., phi^(m+1).
PolyScalar wronskian_gram(const PolyMap& curve, int m);
// H phi as a polynomial on R^k.
PolyScalar apply_det(const DegDet& H, const PolyMap& phi);
// Polynomial degree of H phi in the coefficients of phi.
int det_degree(const DegDet& H, int k);

inline constexpr int kCoeffMapGuard = 64;

// Q = Lambda_{k,D} o H o (Lambda_{k,d})^{-1}, variables = l C(k+d,k) coefficients of phi.
PolyMap induced_coeff_map(const DegDet& H, int k, int d, int l);

struct ClosureResult {
  bool ok = true;
  int tested = 0;
  Vec witness_u;
  double witness_c = 0;
};

ClosureResult scaling_closure_check(const DegDet& H, int k, int d, int l, int samples, std::uint64_t seed = 0);

double lipschitz_constant(const DegDet& H, const PolyMap& phi);

struct RescaleCheck {
  double C_emp = 0;   // max over the grid of log(ratio)/log(mu)
  double ratio_min = 0, ratio_max = 0;
  bool pass = true;
  Vec witness;
};

// Checks mu^{C''} |H phi(lam x)| <= |H(phi o lam)(x)| on a grid, with C'' = 2k or m(m+3).
RescaleCheck rescale_regularity_check(const DegDet& H, const PolyMap& phi, const AffineMap& lam, double mu);
int rescale_exponent(const DegDet& H, int k);

struct DegCert {
  double sigma = 0;
  PolyMap psi;
  double err = 0;
  double Cprime = 1.0;
  double beta_emp = 1.0;
  double h_residual = 0;  // sup |H psi| on [-1,1]^k
};

struct ProjectOptions {
  int directions = 180;
  int penalty_iters = 30;
  std::uint64_t seed = 0;
  bool check_sublevel = true;
};

DegCert degenerate_project(const PolyMap& phi, const DegDet& H, double sigma, const ProjectOptions& o = {});

// Nearest point of Z(Q) to u0, by penalized least squares with rho-continuation then Newton polish.
Vec project_to_variety(const PolyMap& Q, const Vec& u0, int iters = 30);

struct LojasiewiczFit {
  double gamma;
  double C;
  int points;
};

LojasiewiczFit lojasiewicz_probe(const PolyMap& S, int trials, std::uint64_t seed = 0);

double grid_sup(const PolyScalar& p, int per_axis = 33);
double grid_sup(const PolyMap& p, int per_axis = 33);

}  // namespace flatcover
