#include "doctest.h"

#include <cmath>
#include <random>

#include "flatcover/geom.hpp"

using namespace flatcover;

namespace {

Mat random_invertible(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  while (true) {
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = g(rng);
    if (std::abs(A.determinant()) > 0.1) return A;
  }
}

Vec random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

bool same_vertices(const Parallelogram& a, const Parallelogram& b, double tol) {
  auto va = a.vertices(), vb = b.vertices();
  for (const auto& x : va) {
    bool found = false;
    for (const auto& y : vb) found = found || (x - y).norm() < tol;
    if (!found) return false;
  }
  return true;
}

Parallelogram rotated_square(double half, double angle) {
  Mat R(2, 2);
  R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return Parallelogram(Vec::Zero(2), R, Vec::Constant(2, half));
}

}  // namespace

TEST_CASE("pgram_from_affine") {
  Parallelogram P = pgram_from_affine(AffineMap::identity(3));
  CHECK(P.center.norm() == 0.0);
  CHECK((P.half_lengths - Vec::Ones(3)).norm() == 0.0);

  Mat A(2, 2);
  A << 2, 0, 0, 1;
  Vec b(2);
  b << 1, 0;
  Parallelogram Q = pgram_from_affine(AffineMap(A, b));
  CHECK(Q.center(0) == 1.0);
  CHECK(Q.center(1) == 0.0);
  CHECK(Q.half_lengths(0) == 2.0);
  CHECK(Q.half_lengths(1) == 1.0);

  std::mt19937_64 rng(7);
  AffineMap lam(random_invertible(rng, 3), random_vec(rng, 3));
  Parallelogram R = pgram_from_affine(lam);
  R.validate();
  std::uniform_int_distribution<int> bit(0, 1);
  for (int s = 0; s < 20; ++s) {
    Vec u(3);
    for (int i = 0; i < 3; ++i) u(i) = bit(rng) ? 1.0 : -1.0;
    CHECK(R.contains_point(lam(u)));
  }
  // Round trip keeps the point set.
  CHECK(same_vertices(pgram_from_affine(R.to_affine()), R, 1e-12));

  Mat S = Mat::Zero(2, 2);
  S(0, 0) = 1;
  CHECK_THROWS_AS(pgram_from_affine(AffineMap(S, Vec::Zero(2))), Error);
}

TEST_CASE("dilate") {
  Parallelogram U = Parallelogram::cube(2);
  Parallelogram D = dilate(U, 2);
  CHECK(D.half_lengths(0) == 2.0);
  CHECK(contains(D, Parallelogram::box(Vec::Constant(2, -2), Vec::Constant(2, 2))));
  CHECK(same_vertices(dilate(dilate(U, 2), 0.5), U, 1e-15));
  CHECK_THROWS_AS(dilate(U, 0.0), Error);
  CHECK_THROWS_AS(dilate(U, -1.0), Error);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> cdist(0.2, 5.0);
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + t % 2;
    AffineMap lam(random_invertible(rng, n), random_vec(rng, n));
    Parallelogram P = pgram_from_affine(AffineMap(random_invertible(rng, n), random_vec(rng, n)));
    const double C = t == 0 ? 3.0 : cdist(rng);
    CHECK(same_vertices(affine_image(lam, dilate(P, C)), dilate(affine_image(lam, P), C), 1e-10 * (1 + C)));
  }
}

TEST_CASE("contains") {
  Parallelogram P = Parallelogram::cube(2);
  CHECK(contains(P, P));
  CHECK_FALSE(contains(P, Parallelogram::cube(2, 2.0)));
  CHECK_THROWS_AS(contains(P, Parallelogram::cube(3)), Error);

  // Transitivity on random nests.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 100; ++t) {
    Parallelogram P1 = pgram_from_affine(AffineMap(random_invertible(rng, 2), random_vec(rng, 2)));
    // P2 inside 2 P1: image of a small box inside [-2,2]^2 under lambda_{P1}.
    auto inner = [&](const Parallelogram& outer, double C) {
      Vec c(2);
      c << u(rng) * 0.5 * C, u(rng) * 0.5 * C;
      Mat E(2, 2);
      E << 0.4 * C, 0.1 * C * u(rng), 0.1 * C * u(rng), 0.4 * C;
      return affine_image(outer.to_affine(), pgram_from_affine(AffineMap(E, c)));
    };
    Parallelogram P2 = inner(P1, 2.0);
    Parallelogram P3 = inner(P2, 3.0);
    REQUIRE(contains(dilate(P1, 2.0), P2));
    REQUIRE(contains(dilate(P2, 3.0), P3));
    CHECK(contains(dilate(P1, 6.0), P3));
  }
}

TEST_CASE("equivalent") {
  Parallelogram P = Parallelogram::cube(2);
  CHECK(equivalent(P, P, 1.0));
  Parallelogram rot = rotated_square(1.0, M_PI / 4);
  CHECK(equivalent(P, rot, std::sqrt(2.0) + 1e-6));
  CHECK_FALSE(equivalent(P, rot, 1.1));
  CHECK(equivalent(P, dilate(P, 2.0), 2.0));
  CHECK_THROWS_AS(equivalent(P, P, 0.5), Error);
}

TEST_CASE("overlap_profile") {
  std::vector<Parallelogram> tiling;
  for (int i = 0; i < 4; ++i) {
    Vec lo(1), hi(1);
    lo << 0.25 * i;
    hi << 0.25 * (i + 1);
    tiling.push_back(Parallelogram::box(lo, hi));
  }
  OverlapProfile prof = overlap_profile(tiling, {1.0, 3.0});
  CHECK(prof.counts[0] == 2);  // closed membership at shared endpoints
  CHECK(prof.open_counts[0] == 1);
  CHECK(prof.open_counts[1] <= 3);
  CHECK(prof.counts[1] == 4);  // all four closed dilates meet at x = 1/2

  std::vector<Parallelogram> twin = {Parallelogram::cube(2), Parallelogram::cube(2)};
  CHECK(overlap_profile(twin, {1.0}).counts[0] == 2);
  CHECK_THROWS_AS(overlap_profile({}, {1.0}), Error);

  // Monotone in mu and invariant under a common affine bijection.
  std::vector<Parallelogram> grid;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      Vec lo(2), hi(2);
      lo << i, j;
      hi << i + 1.0, j + 1.0;
      grid.push_back(Parallelogram::box(lo, hi));
    }
  std::vector<double> mus = {1.0, 1.5, 2.0, 3.0};
  ProbeSpec ps;
  ps.lowdisc = 0;  // vertices and midpoints transform exactly
  OverlapProfile a = overlap_profile(grid, mus, ps);
  for (std::size_t i = 1; i < a.counts.size(); ++i) CHECK(a.counts[i] >= a.counts[i - 1]);
  std::mt19937_64 rng(5);
  AffineMap lam(random_invertible(rng, 2), random_vec(rng, 2));
  std::vector<Parallelogram> img;
  for (const auto& P : grid) img.push_back(affine_image(lam, P));
  OverlapProfile b = overlap_profile(img, mus, ps);
  for (std::size_t i = 0; i < mus.size(); ++i) CHECK(a.counts[i] == b.counts[i]);
  CHECK(a.counts[0] == 4);
}

TEST_CASE("compose_overlap") {
  std::vector<double> mus = {1, 2, 4, 8, 16, 32};
  OverlapProfile one{mus, std::vector<double>(mus.size(), 1.0)};
  auto c = compose_overlap(one, one, 2.0);
  for (double v : c.counts) CHECK(v == 1.0);

  OverlapProfile B, Bp;
  B.mus = Bp.mus = mus;
  for (double m : mus) {
    B.counts.push_back(m);
    Bp.counts.push_back(m * m);
  }
  auto Bpp = compose_overlap(B, Bp, 2.0);
  for (std::size_t i = 0; i + 1 < mus.size(); ++i) CHECK(Bpp.counts[i] == doctest::Approx(2 * std::pow(mus[i], 3)));

  // Three levels folded one at a time equal the closed form.
  NestedMeshSchedule s;
  s.N = 3;
  s.C1 = 1.0;
  s.C2 = 2.0;
  for (int lev = 0; lev < 3; ++lev) {
    OverlapProfile p;
    p.mus = {1, 2, 4, 8, 16, 32, 64};
    for (double m : p.mus) p.counts.push_back(1 + lev + m);
    s.inner.push_back(p);
  }
  OverlapProfile step = compose_overlap(s.inner[0], s.inner[1], s.C2);
  step.mus = s.inner[1].mus;
  OverlapProfile step3 = compose_overlap(step, s.inner[2], s.C2);
  auto closed = iterative_overlap(s, 3, {1, 2, 4, 8});
  for (int i = 0; i < 4; ++i) CHECK(closed.counts[i] == doctest::Approx(step3.counts[i]));
}

TEST_CASE("mesh_containment_check") {
  NestedMeshSchedule s;
  s.N = 1;
  CHECK(mesh_containment_check(s, 1));
  s.N = 4;
  s.C1 = 1.0;
  s.C2 = 2.0;
  CHECK(mesh_containment_check(s, 8));
  CHECK_FALSE(mesh_containment_check(s, 7));
}
