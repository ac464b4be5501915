#include "doctest.h"

#include <cmath>
#include <random>

#include "flatcover/poly.hpp"

using namespace flatcover;

namespace {

PolyScalar random_poly(std::mt19937_64& rng, int k, int d) {
  std::normal_distribution<double> g;
  PolyScalar p(k, d);
  for (int i = 0; i < p.coeffs().size(); ++i) p.coeffs()(i) = g(rng);
  return p;
}

Vec random_point(std::mt19937_64& rng, int k, double r = 1.0) {
  std::uniform_real_distribution<double> u(-r, r);
  Vec x(k);
  for (int i = 0; i < k; ++i) x(i) = u(rng);
  return x;
}

PolyScalar xsq(int k = 1, int d = 2) {
  MultiIndex a(k, 0);
  a[0] = 2;
  return PolyScalar::monomial(k, d, a);
}

}  // namespace

TEST_CASE("monomial ordering and index") {
  const auto& ms = monomials(2, 2);
  REQUIRE(ms.size() == 6);
  CHECK(ms[0] == MultiIndex{0, 0});
  CHECK(ms[1] == MultiIndex{1, 0});
  CHECK(ms[2] == MultiIndex{0, 1});
  CHECK(ms[3] == MultiIndex{2, 0});
  CHECK(ms[4] == MultiIndex{1, 1});
  CHECK(ms[5] == MultiIndex{0, 2});
  for (int k = 1; k <= 4; ++k)
    for (int d = 0; d <= 6; ++d) {
      const auto& m = monomials(k, d);
      CHECK(static_cast<long>(m.size()) == binom(k + d, k));
      for (std::size_t i = 0; i < m.size(); ++i) CHECK(monomial_index(m[i], d) == static_cast<int>(i));
    }
}

TEST_CASE("eval grad hessian_form") {
  Vec v1(1);
  v1 << 1.0;
  Vec x1(1);
  x1 << 0.37;
  CHECK(xsq().hessian_form(x1, v1) == doctest::Approx(2.0));

  PolyScalar p = PolyScalar::monomial(2, 2, {2, 0}) + PolyScalar::monomial(2, 2, {0, 2}, 3.0);
  Vec v(2);
  v << 0, 1;
  std::mt19937_64 rng(42);
  CHECK(p.hessian_form(random_point(rng, 2), v) == doctest::Approx(6.0));

  for (int t = 0; t < 20; ++t) {
    PolyScalar c = random_poly(rng, 3, 3);
    Vec x = random_point(rng, 3);
    Vec g = c.grad(x);
    const double h = 1e-5;
    for (int i = 0; i < 3; ++i) {
      Vec e = Vec::Zero(3);
      e(i) = h;
      const double fd = (c.eval(x + e) - c.eval(x - e)) / (2 * h);
      CHECK(std::abs(fd - g(i)) <= 1e-7 * std::max(1.0, std::abs(g(i))));
    }
    Vec dir = random_point(rng, 3).normalized();
    const double h2 = 1e-4;
    const double sd = (c.eval(x + h2 * dir) - 2 * c.eval(x) + c.eval(x - h2 * dir)) / (h2 * h2);
    const double hf = c.hessian_form(x, dir);
    CHECK(std::abs(sd - hf) <= 1e-6 * std::max(1.0, std::abs(hf)) * 100);
  }
  CHECK_THROWS_AS(p.eval(Vec::Zero(3)), Error);
}

TEST_CASE("compose_affine") {
  Mat A(1, 1);
  A << 2.0;
  Vec b(1);
  b << 1.0;
  PolyScalar q = compose_affine(xsq(), AffineMap(A, b));
  CHECK(q.coeffs()(0) == 1.0);
  CHECK(q.coeffs()(1) == 4.0);
  CHECK(q.coeffs()(2) == 4.0);

  std::mt19937_64 rng(9);
  PolyScalar r = random_poly(rng, 2, 4);
  CHECK((compose_affine(r, AffineMap::identity(2)).coeffs() - r.coeffs()).norm() == 0.0);

  std::normal_distribution<double> g;
  Mat M(3, 3);
  for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = g(rng);
  AffineMap lam(M, random_point(rng, 3));
  PolyScalar c = random_poly(rng, 3, 4);
  PolyScalar cc = compose_affine(c, lam);
  CHECK(cc.d() == 4);
  for (int t = 0; t < 100; ++t) {
    Vec x = random_point(rng, 3);
    const double ref = c.eval(lam(x));
    CHECK(std::abs(cc.eval(x) - ref) <= 1e-9 * std::max(1.0, std::abs(ref)));
  }

  // Homomorphism: (PQ) o lam = (P o lam)(Q o lam).
  PolyScalar P = random_poly(rng, 3, 2), Q = random_poly(rng, 3, 2);
  Vec lhs = compose_affine(P * Q, lam).coeffs();
  Vec rhs = (compose_affine(P, lam) * compose_affine(Q, lam)).coeffs();
  CHECK((lhs - rhs).norm() <= 1e-9 * rhs.norm());
}

TEST_CASE("sup_norm_bounds") {
  Parallelogram I = Parallelogram::cube(1);
  auto b = sup_norm_bounds(PolyScalar::variable(1, 1, 0), I);
  CHECK(b.lower == doctest::Approx(1.0));
  CHECK(b.upper == doctest::Approx(1.0));

  PolyScalar T3(1, 3);
  T3.coeffs() << 0, -3, 0, 4;
  auto t = sup_norm_bounds(T3, I);
  CHECK(t.lower == doctest::Approx(1.0));
  CHECK(t.upper == doctest::Approx(7.0));

  // Sandwich and dilation growth.
  std::mt19937_64 rng(17);
  const double C = polycoeff_constant(2, 3);
  CHECK(C >= 1.0);
  for (int s = 0; s < 20; ++s) {
    PolyScalar p = random_poly(rng, 2, 3);
    Parallelogram T = pgram_from_affine(AffineMap(Mat::Identity(2, 2) * 0.3, random_point(rng, 2)));
    auto base = sup_norm_bounds(p, T);
    CHECK(base.lower <= base.upper);
    const double mu = 4.0;
    auto big = sup_norm_bounds(p, dilate(T, mu));
    // sup over muT <= (sum |c| of p o lambda_T) mu^d <= binom(k+d,k) C mu^d sup_T.
    CHECK(big.lower <= binom(5, 2) * C * std::pow(mu, 3) * base.lower * 1.05);
  }
}

TEST_CASE("coeff_iso") {
  PolyMap zero({PolyScalar(2, 3), PolyScalar(2, 3)});
  CHECK(coeff_iso(zero).norm() == 0.0);
  CHECK(coeff_iso(zero).size() == 2 * binom(5, 2));

  std::mt19937_64 rng(23);
  for (int t = 0; t < 100; ++t) {
    PolyMap m({random_poly(rng, 2, 3), random_poly(rng, 2, 3)});
    Vec v = coeff_iso(m);
    PolyMap back = coeff_iso_inv(v, 2, 3, 2);
    CHECK(coeff_iso(back) == v);
  }
  CHECK_THROWS_AS(coeff_iso_inv(Vec::Zero(5), 2, 3, 2), Error);

  // Norm comparability on P_{2,3}.
  const double C = polycoeff_constant(2, 3);
  const auto grid = cheb_grid(2, 33);
  for (int t = 0; t < 50; ++t) {
    PolyScalar p = random_poly(rng, 2, 3);
    double sup = 0;
    for (const auto& u : grid) sup = std::max(sup, std::abs(p.eval(u)));
    CHECK(sup <= p.sum_abs_coeff() + 1e-12);
    CHECK(p.max_abs_coeff() <= 2.0 * C * sup);
  }
}

TEST_CASE("best_affine_fit") {
  PolyScalar aff(2, 2);
  aff.coeffs() << 1.5, -2.0, 0.25, 0, 0, 0;
  auto f = best_affine_fit(aff, Parallelogram::cube(2));
  CHECK(f.err <= 1e-12);

  for (int e = 1; e <= 6; ++e) {
    const double h = std::pow(2.0, -e);
    Vec lo(1), hi(1);
    lo << 0.0;
    hi << h;
    auto r = best_affine_fit(xsq(), Parallelogram::box(lo, hi));
    CHECK(std::abs(r.err / (h * h / 8) - 1.0) <= 0.02);
    // The map is in original coordinates.
    Vec x(1);
    x << h / 2;
    CHECK(std::abs(xsq().eval(x) - r.L(x)(0)) <= r.err * (1 + 1e-9));
  }

  // x^2 + y^2 on the unit square vs a dense parameter search.
  PolyScalar q = PolyScalar::monomial(2, 2, {2, 0}) + PolyScalar::monomial(2, 2, {0, 2});
  Vec lo = Vec::Zero(2), hi = Vec::Ones(2);
  auto fit = best_affine_fit(q, Parallelogram::box(lo, hi));
  const auto grid = cheb_grid(2, 17);
  double oracle = 1e9;
  for (int a = 0; a <= 40; ++a)
    for (int b = 0; b <= 40; ++b)
      for (int c = 0; c <= 40; ++c) {
        const double c0 = -0.5 + a * 0.025, c1 = b * 0.05, c2 = c * 0.05;
        double m = 0;
        for (const auto& u : grid) {
          const double x = 0.5 * (u(0) + 1), y = 0.5 * (u(1) + 1);
          m = std::max(m, std::abs(x * x + y * y - c0 - c1 * x - c2 * y));
        }
        oracle = std::min(oracle, m);
      }
  CHECK(fit.err <= 2.0 * oracle);
  CHECK(fit.err >= 0.5 * oracle);
}
