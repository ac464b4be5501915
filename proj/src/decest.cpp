#include "flatcover/decest.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

#include "flatcover/parallel.hpp"

namespace flatcover {

void TorusGrid::validate() const {
  if (n < 1) throw Error(ErrorKind::BadParam, "torus dimension must be >= 1");
  if (N < 16 || (N & (N - 1)) != 0) throw Error(ErrorKind::BadParam, "N must be a power of two >= 16");
  if (!(delta > 0 && delta < 1)) throw Error(ErrorKind::BadParam, "delta must lie in (0,1)");
  if (std::pow(static_cast<double>(N), n) > static_cast<double>(1 << 24))
    throw Error(ErrorKind::BadParam, "torus too large (N^n > 2^24)");
}

FreqTileSet discretize(const PolyMap& phi, const PartitionOutput& cover, const TorusGrid& grid) {
  grid.validate();
  const int k = phi.k(), l = phi.l(), N = grid.N;
  if (k + l != grid.n) throw Error(ErrorKind::DimMismatch, "torus dimension must equal k + l");
  if (cover.k != k) throw Error(ErrorKind::DimMismatch, "cover dimension differs from phi");
  const double d = grid.delta;

  FreqTileSet out;
  out.n = grid.n;
  out.N = N;
  out.lo = Vec(grid.n);
  out.step = Vec(grid.n);
  for (int i = 0; i < k; ++i) {
    out.lo(i) = -1;
    out.step(i) = 2.0 / N;
  }

  long nx = 1;
  for (int i = 0; i < k; ++i) nx *= N;
  std::vector<Vec> xs(nx), ys(nx);
  Vec ymin = Vec::Constant(l, std::numeric_limits<double>::infinity()), ymax = -ymin;
  for (long j = 0; j < nx; ++j) {
    Vec x(k);
    long r = j;
    for (int i = 0; i < k; ++i) {
      x(i) = -1 + (2.0 * (r % N) + 1) / N;
      r /= N;
    }
    xs[j] = x;
    ys[j] = phi.eval(x);
    ymin = ymin.cwiseMin(ys[j]);
    ymax = ymax.cwiseMax(ys[j]);
  }
  for (int i = 0; i < l; ++i) {
    out.lo(k + i) = ymin(i) - d;
    out.step(k + i) = (ymax(i) - ymin(i) + 2 * d) / N;
  }

  const std::vector<Parallelogram> regions = cover.regions();
  const CoverIndex idx(regions);
  std::vector<FreqTile> tiles(regions.size());
  for (std::size_t c = 0; c < regions.size(); ++c) tiles[c].cell = static_cast<int>(c);
  for (long j = 0; j < nx; ++j) {
    int owner = -1;
    if (idx.count(xs[j]) == 0) continue;
    for (std::size_t c = 0; c < regions.size(); ++c)
      if (regions[c].contains_point(xs[j], 1e-12)) {
        owner = static_cast<int>(c);
        break;
      }
    if (owner < 0) continue;
    // Lattice ranges along each graph axis.
    std::vector<int> a(l), b(l);
    bool empty = false;
    for (int i = 0; i < l; ++i) {
      const double s = out.step(k + i), o = out.lo(k + i);
      a[i] = std::max(0, static_cast<int>(std::ceil((ys[j](i) - d - o) / s - 0.5 - 1e-9)));
      b[i] = std::min(N - 1, static_cast<int>(std::floor((ys[j](i) + d - o) / s - 0.5 + 1e-9)));
      if (a[i] > b[i]) empty = true;
    }
    if (empty) continue;
    std::vector<int> base(k);
    long r = j;
    for (int i = 0; i < k; ++i) {
      base[i] = static_cast<int>(r % N);
      r /= N;
    }
    std::vector<int> yi(a);
    while (true) {
      std::vector<int> p(base);
      p.insert(p.end(), yi.begin(), yi.end());
      tiles[owner].points.push_back(std::move(p));
      int i = 0;
      while (i < l && ++yi[i] > b[i]) yi[i] = a[i], ++i;
      if (i == l) break;
    }
  }
  for (auto& t : tiles) {
    if (t.points.empty()) {
      out.dropped.push_back(t.cell);
    } else {
      out.total_points += static_cast<long>(t.points.size());
      out.tiles.push_back(std::move(t));
    }
  }
  return out;
}

Coeffs draw_coefficients(const FreqTileSet& tiles, int trial, std::uint64_t seed) {
  Coeffs a(tiles.tiles.size());
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(trial)};
  std::mt19937_64 rng(ss);
  std::uniform_real_distribution<double> u(0, 2 * M_PI);
  for (std::size_t t = 0; t < tiles.tiles.size(); ++t) {
    a[t].resize(tiles.tiles[t].points.size(), 1.0);
    if (trial > 0)
      for (auto& c : a[t]) c = std::polar(1.0, u(rng));
  }
  return a;
}

namespace {

struct FftBuf {
  fftw_complex* p;
  explicit FftBuf(long n) : p(fftw_alloc_complex(n)) {}
  ~FftBuf() { fftw_free(p); }
  FftBuf(const FftBuf&) = delete;
  FftBuf& operator=(const FftBuf&) = delete;
};

std::mutex plan_mutex;

fftw_plan backward_plan(int n, int N) {
  static std::map<std::pair<int, int>, fftw_plan> plans;
  std::lock_guard<std::mutex> lk(plan_mutex);
  auto key = std::make_pair(n, N);
  auto it = plans.find(key);
  if (it != plans.end()) return it->second;
  long sz = 1;
  for (int i = 0; i < n; ++i) sz *= N;
  FftBuf a(sz), b(sz);
  std::vector<int> dims(n, N);
  fftw_plan pl = fftw_plan_dft(n, dims.data(), a.p, b.p, FFTW_BACKWARD, FFTW_ESTIMATE);
  plans.emplace(key, pl);
  return pl;
}

// Normalized L^p norm over the grid (mean, not sum).
double lp_norm(const fftw_complex* f, long sz, double p) {
  if (std::isinf(p)) {
    double m = 0;
    for (long i = 0; i < sz; ++i) m = std::max(m, std::hypot(f[i][0], f[i][1]));
    return m;
  }
  double s = 0;
  for (long i = 0; i < sz; ++i) s += std::pow(std::hypot(f[i][0], f[i][1]), p);
  return std::pow(s / static_cast<double>(sz), 1.0 / p);
}

}  // namespace

DecNorms dec_norms(const FreqTileSet& tiles, const Coeffs& a, double p) {
  const int n = tiles.n, N = tiles.N;
  long sz = 1;
  for (int i = 0; i < n; ++i) sz *= N;
  const fftw_plan pl = backward_plan(n, N);
  FftBuf in(sz), f(sz), F(sz);
  std::fill(&F.p[0][0], &F.p[0][0] + 2 * sz, 0.0);
  DecNorms out;
  for (std::size_t t = 0; t < tiles.tiles.size(); ++t) {
    std::fill(&in.p[0][0], &in.p[0][0] + 2 * sz, 0.0);
    const auto& pts = tiles.tiles[t].points;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      long ix = 0;
      for (int i = 0; i < n; ++i) ix = ix * N + pts[j][i];
      in.p[ix][0] += a[t][j].real();
      in.p[ix][1] += a[t][j].imag();
    }
    fftw_execute_dft(pl, in.p, f.p);
    out.tiles.push_back(lp_norm(f.p, sz, p));
    for (long i = 0; i < sz; ++i) {
      F.p[i][0] += f.p[i][0];
      F.p[i][1] += f.p[i][1];
    }
  }
  out.sum = lp_norm(F.p, sz, p);
  return out;
}

double dec_ratio(const FreqTileSet& tiles, const Coeffs& a, double p, double q, double alpha) {
  if (p < 2 || q < 2) throw Error(ErrorKind::BadParam, "p, q must be >= 2");
  const DecNorms nm = dec_norms(tiles, a, p);
  double agg = 0;
  if (std::isinf(q)) {
    for (double v : nm.tiles) agg = std::max(agg, v);
  } else {
    for (double v : nm.tiles) agg += std::pow(v, q);
    agg = std::pow(agg, 1.0 / q);
  }
  if (!(agg > 0)) throw Error(ErrorKind::ZeroSignal, "every tile synthesizes to zero");
  const double R = static_cast<double>(tiles.tiles.size());
  const double qi = std::isinf(q) ? 0.0 : 1.0 / q;
  return nm.sum / (std::pow(R, 0.5 - qi + alpha) * agg);
}

DecEstimate estimate_dec(const FreqTileSet& tiles, double p, double q, double alpha, int trials, std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorKind::BadParam, "trials must be >= 1");
  if (tiles.tiles.empty()) throw Error(ErrorKind::ZeroSignal, "no nonempty tiles");
  DecEstimate e;
  e.trials = trials;
  e.seed = seed;
  e.p = p;
  e.q = q;
  e.alpha = alpha;
  e.ratios.assign(trials + 1, 0.0);
  parallel_for(trials + 1, [&](long t) {
    e.ratios[t] = dec_ratio(tiles, draw_coefficients(tiles, static_cast<int>(t), seed), p, q, alpha);
  });
  e.argmax = static_cast<int>(std::max_element(e.ratios.begin(), e.ratios.end()) - e.ratios.begin());
  e.ratio_max = e.ratios[e.argmax];
  return e;
}

std::string SweepResult::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "delta,ratio_max,tiles,p,q,alpha,seed\n";
  for (const auto& r : rows) os << r.delta << ',' << r.ratio_max << ',' << r.tiles << ',' << p << ',' << q << ','
                                << alpha << ',' << seed << '\n';
  return os.str();
}

SweepRow sweep_row(const PolyMap& phi, const PartitionOutput& cover, double delta, int N, double p, double q,
                   double alpha, int trials, std::uint64_t seed) {
  TorusGrid g;
  g.n = phi.k() + phi.l();
  g.N = N;
  g.delta = delta;
  const FreqTileSet t = discretize(phi, cover, g);
  const DecEstimate e = estimate_dec(t, p, q, alpha, trials, seed);
  return {delta, e.ratio_max, static_cast<int>(t.tiles.size()), static_cast<int>(t.dropped.size()), e.argmax};
}

void fit_sweep(SweepResult& s) {
  if (s.rows.size() < 3) throw Error(ErrorKind::InconclusiveFit, "sweep needs at least 3 delta values");
  const auto [mn, mx] = std::minmax_element(s.rows.begin(), s.rows.end(),
                                            [](const SweepRow& a, const SweepRow& b) { return a.delta < b.delta; });
  if (std::log2(mx->delta / mn->delta) < 2 - 1e-12) throw Error(ErrorKind::InconclusiveFit, "deltas span < 2 octaves");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(s.rows.size());
  for (const auto& r : s.rows) {
    const double x = std::log(1 / r.delta), y = std::log(r.ratio_max);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  s.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  s.intercept = (sy - s.slope * sx) / m;
}

SweepResult sweep(const PolyMap& phi, const CoverGenerator& gen, const std::vector<double>& deltas, int N, double p,
                  double q, double alpha, int trials, std::uint64_t seed) {
  SweepResult s;
  s.p = p;
  s.q = q;
  s.alpha = alpha;
  s.seed = seed;
  for (double d : deltas) s.rows.push_back({d, 0, 0, 0});
  fit_sweep(s);  // reject a bad schedule before the expensive part
  for (auto& r : s.rows) r = sweep_row(phi, gen(r.delta), r.delta, N, p, q, alpha, trials, seed);
  fit_sweep(s);
  return s;
}

PartitionOutput interval_cover(double len, double lo, double hi) {
  if (!(len > 0) || !(hi > lo)) throw Error(ErrorKind::BadParam, "interval_cover needs len > 0 and hi > lo");
  PartitionOutput out;
  out.k = 1;
  out.delta = len;
  const int n = static_cast<int>(std::ceil((hi - lo) / len - 1e-9));
  for (int i = 0; i < n; ++i) {
    const double a = lo + (hi - lo) * i / n, b = lo + (hi - lo) * (i + 1) / n;
    out.cells.push_back({Parallelogram::box(Vec::Constant(1, a), Vec::Constant(1, b)), {}, {}, 0});
  }
  out.stats.cardinality = n;
  out.stats.min_dimension = (hi - lo) / n;
  return out;
}

}  // namespace flatcover
