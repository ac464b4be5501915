#include "flatcover/flatness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "flatcover/parallel.hpp"

namespace flatcover {

const char* sense_name(Sense s) {
  switch (s) {
    case Sense::Graph: return "Graph";
    case Sense::F1: return "F1";
    case Sense::F2: return "F2";
    case Sense::F3: return "F3";
  }
  return "?";
}

Sense sense_from_name(const std::string& s) {
  if (s == "Graph") return Sense::Graph;
  if (s == "F1") return Sense::F1;
  if (s == "F2") return Sense::F2;
  if (s == "F3") return Sense::F3;
  throw Error(ErrorKind::BadSpec, "unknown flatness sense " + s);
}

namespace {

Mat polar(const Mat& A) {
  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

Mat design(const std::vector<Vec>& grid, int k) {
  Mat X(grid.size(), k + 1);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    X(g, 0) = 1.0;
    X.row(g).tail(k) = grid[g].transpose();
  }
  return X;
}

Mat values(const PolyMap& Q, const std::vector<Vec>& grid) {
  Mat Y(grid.size(), Q.l());
  for (std::size_t g = 0; g < grid.size(); ++g) Y.row(g) = Q.eval(grid[g]).transpose();
  return Y;
}

// Pullback theta ((k+1) x l, u-coordinates) to an affine map in x-coordinates.
AffineMap theta_to_affine(const Mat& theta, const Parallelogram& omega) {
  const int k = omega.dim();
  const AffineMap inv = omega.to_affine().inverse();
  Mat lin = theta.bottomRows(k).transpose();  // l x k acting on u
  return AffineMap(lin * inv.matrix, theta.row(0).transpose() + lin * inv.offset);
}

void check_dims(const PolyMap& phi, const Parallelogram& omega, int m) {
  const int k = phi.k(), n = phi.k() + phi.l();
  if (omega.dim() != k) throw Error(ErrorKind::DimMismatch, "region dimension differs from k");
  if (m < k || m > n - 1) throw Error(ErrorKind::BadDimension, "flat dimension must satisfy k <= m <= n-1");
  if (omega.half_lengths.minCoeff() < 0.5e-12 || std::abs(omega.dirs.determinant()) < 1e-12)
    throw Error(ErrorKind::BadRegion, "degenerate region");
}

std::vector<Vec> local_grid(const Vec& u, double h, int per_axis) {
  std::vector<Vec> out;
  for (const Vec& g : cheb_grid(static_cast<int>(u.size()), per_axis)) {
    Vec p = (u + h * g).cwiseMax(-1.0).cwiseMin(1.0);
    out.push_back(p);
  }
  return out;
}

std::vector<Vec> unit_directions(int k, int count) {
  std::vector<Vec> out;
  if (k == 1) {
    out.push_back(Vec::Ones(1));
  } else if (k == 2) {
    for (int j = 0; j < count; ++j) {
      Vec w(2);
      w << std::cos(M_PI * j / count), std::sin(M_PI * j / count);
      out.push_back(w);
    }
  } else {
    // Gaussian directions plus the coordinate axes and diagonals.
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g;
    for (int i = 0; i < k; ++i) out.push_back(Vec::Unit(k, i));
    out.push_back(Vec::Ones(k).normalized());
    for (int j = 0; j < count * k; ++j) {
      Vec w(k);
      for (int i = 0; i < k; ++i) w(i) = g(rng);
      out.push_back(w.normalized());
    }
  }
  return out;
}

double rel_zero(double v, double scale) { return std::abs(v) <= 1e-13 * std::max(1.0, scale) ? 0.0 : v; }

}  // namespace

double cube_chord(const Vec& u, const Vec& w) {
  double tp = std::numeric_limits<double>::infinity(), tm = tp;
  for (int i = 0; i < u.size(); ++i) {
    if (w(i) > 0) {
      tp = std::min(tp, (1 - u(i)) / w(i));
      tm = std::min(tm, (1 + u(i)) / w(i));
    } else if (w(i) < 0) {
      tp = std::min(tp, (-1 - u(i)) / w(i));
      tm = std::min(tm, (u(i) - 1) / w(i));
    }
  }
  return std::max(std::max(tp, 0.0), std::max(tm, 0.0));
}

StiefelResult min_sup_stiefel(const Mat& S, int r, bool free_offset, int restarts, int steps, std::uint64_t seed,
                              const Mat* init) {
  const int l = static_cast<int>(S.cols());
  auto evaluate = [&](const Mat& U, Vec& b) {
    Mat P = S * U.transpose();
    b = free_offset ? Vec(-ball_center(P)) : Vec::Zero(r);
    return sup_rows(P.rowwise() + b.transpose());
  };
  if (r >= l) {
    StiefelResult res{Mat::Identity(l, l), Vec(), 0};
    res.value = evaluate(res.U, res.b);
    return res;
  }
  std::vector<StiefelResult> results(std::max(1, restarts));
  parallel_for(static_cast<long>(results.size()), [&](long s) {
    Mat U;
    if (s == 0) {
      if (init && init->rows() == r && init->cols() == l) {
        U = polar(*init);
      } else {
        Mat C = S;
        if (free_offset) C = S.rowwise() - S.colwise().mean();
        Eigen::SelfAdjointEigenSolver<Mat> es(C.transpose() * C);
        U = es.eigenvectors().leftCols(r).transpose();  // smallest eigenvalues first
      }
    } else {
      std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(s));
      std::normal_distribution<double> g;
      Mat A(r, l);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < l; ++j) A(i, j) = g(rng);
      U = polar(A);
    }
    Vec b;
    double f = evaluate(U, b);
    double eta = 0.1;
    for (int it = 0; it < steps && f > 0; ++it) {
      Mat P = (S * U.transpose()).rowwise() + b.transpose();
      Vec nrm = P.rowwise().norm();
      Mat G = Mat::Zero(r, l);
      int active = 0;
      for (long j = 0; j < P.rows(); ++j) {
        if (nrm(j) < (1 - 1e-3) * f) continue;
        G += P.row(j).transpose() * S.row(j) / std::max(nrm(j), 1e-300);
        ++active;
      }
      G /= std::max(active, 1);
      Mat Gt = G - 0.5 * (G * U.transpose() + U * G.transpose()) * U;
      const double gn = Gt.norm();
      if (gn < 1e-15) break;
      bool moved = false;
      for (int tries = 0; tries < 8 && !moved; ++tries) {
        Mat Un = polar(U - eta * (f / gn) * Gt / gn);
        Vec bn;
        const double fn = evaluate(Un, bn);
        if (fn < f) {
          U = Un;
          b = bn;
          f = fn;
          eta = std::min(1.0, eta * 1.5);
          moved = true;
        } else {
          eta *= 0.5;
        }
      }
      if (!moved) break;
    }
    results[s] = {U, b, f};
  });
  std::size_t best = 0;
  for (std::size_t s = 1; s < results.size(); ++s)
    if (results[s].value < results[best].value) best = s;
  return results[best];
}

double f1_scalar(const PolyScalar& p, const Parallelogram& omega, int per_axis) {
  return best_affine_fit(p, omega, per_axis).err;
}

FlatnessWitness flat_f1(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o) {
  check_dims(phi, omega, m);
  const int k = phi.k(), l = phi.l(), n = k + l, r = n - m;
  const PolyMap Q = compose_affine(phi, omega.to_affine());
  const auto grid = cheb_grid(k, o.per_axis);
  const Mat X = design(grid, k);
  const Mat Y = values(Q, grid);

  Mat U = Mat::Identity(l, l);
  Mat theta;
  double err;
  if (r == l) {
    MinimaxFit f = minimax_fit(X, Y);
    theta = f.theta;
    err = f.err;
  } else {
    Mat theta_c(k + 1, l);
    for (int i = 0; i < l; ++i) theta_c.col(i) = minimax_fit(X, Y.col(i)).theta;
    // Two starts: minimax residuals, and least-squares residuals (exact when some U kills the nonaffine part).
    const Mat R = Y - X * theta_c;
    const Mat Rls = Y - X * X.colPivHouseholderQr().solve(Y);
    err = INFINITY;
    for (const Mat* S : {&R, &Rls}) {
      const Mat Uc = min_sup_stiefel(*S, r, true, o.restarts, o.steps, o.seed).U;
      MinimaxFit f = minimax_fit(X, Y * Uc.transpose());
      if (f.err < err) {
        U = Uc;
        theta = theta_c + (f.theta - theta_c * Uc.transpose()) * Uc;
        err = f.err;
      }
    }
  }
  if (o.refine && err > 0) {
    const Mat res = (Y - X * theta) * U.transpose();
    Eigen::Index arg;
    res.rowwise().squaredNorm().maxCoeff(&arg);
    const auto loc = local_grid(grid[arg], 2.0 / std::max(2, o.per_axis - 1), 9);
    const Mat resl = (values(Q, loc) - design(loc, k) * theta) * U.transpose();
    err = std::max(err, sup_rows(resl));
  }
  FlatnessWitness w;
  w.sense = Sense::F1;
  w.m = m;
  w.Uprime = U;
  w.L = theta_to_affine(theta, omega);
  w.bound = rel_zero(err, Y.cwiseAbs().maxCoeff());
  w.certified = kCertMargin * w.bound;
  return w;
}

FlatnessWitness flat_f2(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o) {
  check_dims(phi, omega, m);
  const int k = phi.k(), l = phi.l(), n = k + l, r = n - m;
  const PolyMap Q = compose_affine(phi, omega.to_affine());
  const auto pts = cheb_grid(k, o.pair_axis);
  const long N = static_cast<long>(pts.size());
  std::vector<Vec> val(N);
  std::vector<Mat> jac(N);
  for (long i = 0; i < N; ++i) {
    val[i] = Q.eval(pts[i]);
    jac[i] = Q.jacobian(pts[i]);
  }
  Mat S(N * N, l);
  double scale = 0;
  for (long a = 0; a < N; ++a) {
    scale = std::max(scale, val[a].cwiseAbs().maxCoeff());
    for (long b = 0; b < N; ++b) S.row(a * N + b) = (val[b] - val[a] - jac[a] * (pts[b] - pts[a])).transpose();
  }
  StiefelResult res = min_sup_stiefel(S, r, false, o.restarts, o.steps, o.seed);
  FlatnessWitness w;
  w.sense = Sense::F2;
  w.m = m;
  w.Uprime = res.U;
  w.bound = rel_zero(res.value, scale);
  w.certified = kCertMargin * w.bound;
  return w;
}

namespace {

Mat f3_samples(const PolyMap& Q, const std::vector<Vec>& pts, const std::vector<Vec>& dirs) {
  const int l = Q.l();
  Mat S(pts.size() * dirs.size(), l);
  long row = 0;
  for (const Vec& u : pts)
    for (const Vec& w : dirs) {
      const double t = cube_chord(u, w);
      Vec h(l);
      for (int i = 0; i < l; ++i) h(i) = Q[i].hessian_form(u, w);
      S.row(row++) = (h * t * t).transpose();
    }
  return S;
}

}  // namespace

FlatnessWitness flat_f3(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o) {
  check_dims(phi, omega, m);
  const int k = phi.k(), l = phi.l(), n = k + l, r = n - m;
  const PolyMap Q = compose_affine(phi, omega.to_affine());
  const auto pts = cheb_grid(k, o.f3_axis);
  const auto dirs = unit_directions(k, o.directions);
  const Mat S = f3_samples(Q, pts, dirs);
  StiefelResult res = min_sup_stiefel(S, r, false, o.restarts, o.steps, o.seed);
  double bound = res.value;
  if (o.refine && bound > 0) {
    Eigen::Index arg;
    (S * res.U.transpose()).rowwise().squaredNorm().maxCoeff(&arg);
    const Vec u0 = pts[arg / dirs.size()];
    const auto loc = local_grid(u0, 2.0 / std::max(2, o.f3_axis - 1), 5);
    const Mat Sl = f3_samples(Q, loc, unit_directions(k, 4 * o.directions));
    bound = std::max(bound, sup_rows(Sl * res.U.transpose()));
  }
  FlatnessWitness w;
  w.sense = Sense::F3;
  w.m = m;
  w.Uprime = res.U;
  w.bound = bound;
  w.certified = kCertMargin * w.bound;
  return w;
}

FlatnessWitness flat_graph(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o) {
  check_dims(phi, omega, m);
  const int k = phi.k(), l = phi.l(), n = k + l, r = n - m;
  const auto grid = cheb_grid(k, o.per_axis);
  const AffineMap lam = omega.to_affine();
  Mat Y(grid.size(), n);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const Vec x = lam(grid[g]);
    Y.row(g).head(k) = x.transpose();
    Y.row(g).tail(l) = phi.eval(x).transpose();
  }
  StiefelResult res = min_sup_stiefel(Y, r, true, o.restarts, o.steps, o.seed);
  FlatnessWitness w;
  w.sense = Sense::Graph;
  w.m = m;
  w.Uprime = res.U;
  w.bound = res.value;
  w.certified = kCertMargin * w.bound;
  // With k = m, solve A1 x + A2 y + b = 0 for y when A2 is invertible.
  if (m == k) {
    const Mat A1 = res.U.leftCols(k), A2 = res.U.rightCols(l);
    Eigen::FullPivLU<Mat> lu(A2);
    if (lu.isInvertible()) w.L = AffineMap(-lu.solve(A1), -lu.solve(res.b));
  }
  return w;
}

FlatDecomposition flat_decompose(const PolyMap& phi, int m, double delta, const FlatOptions& o) {
  const int k = phi.k(), l = phi.l(), n = k + l, r = n - m;
  const Parallelogram cube = Parallelogram::cube(k);
  const FlatnessWitness w3 = flat_f3(phi, cube, m, o);
  // Chords of [-1,1]^k reach 2 sqrt(k), so F3 of an O(delta) Hessian is O(k delta).
  if (w3.bound > 32.0 * k * delta) throw Error(ErrorKind::NotFlat, "F3 bound exceeds the claimed scale");
  Mat U(l, l);
  if (r == l) {
    U = w3.Uprime;
  } else {
    U.topRows(r) = w3.Uprime;
    Eigen::HouseholderQR<Mat> qr(w3.Uprime.transpose());
    Mat full = qr.householderQ() * Mat::Identity(l, l);
    U.bottomRows(l - r) = full.rightCols(l - r).transpose();
  }
  const PolyMap g = linear_combine(U, phi);
  std::vector<PolyScalar> psi;
  Mat Lm = Mat::Zero(l, k);
  Vec Lb = Vec::Zero(l), sigma = Vec::Zero(l);
  for (int i = 0; i < l; ++i) {
    PolyScalar q = g[i];
    Lb(i) = q.coeffs()(0);
    q.coeffs()(0) = 0;
    for (int j = 0; j < k && q.d() >= 1; ++j) {
      Lm(i, j) = q.coeffs()(1 + j);
      q.coeffs()(1 + j) = 0;
    }
    sigma(i) = q.max_abs_coeff();
    psi.push_back(sigma(i) > 0 ? q * (1.0 / sigma(i)) : q);
  }
  return {U, PolyMap(std::move(psi)), AffineMap(Lm, Lb), sigma};
}

PolyMap recombine(const FlatDecomposition& dec) {
  const int l = dec.psi.l();
  std::vector<PolyScalar> comps;
  for (int i = 0; i < l; ++i) comps.push_back(dec.psi[i] * dec.sigma(i));
  PolyMap s = linear_combine(Mat::Identity(l, l), PolyMap(comps), &dec.L);
  return linear_combine(dec.U.transpose(), s);
}

RatioCheck check_f1_to_f3(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o) {
  const double f1 = flat_f1(phi, omega, m, o).bound;
  const double f3 = flat_f3(phi, omega, m, o).bound;
  if (f1 == 0.0) return {1.0, f3 > 0.0};
  return {f3 / f1, false};
}

}  // namespace flatcover
