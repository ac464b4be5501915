#include "flatcover/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace flatcover {

const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::SingularMap: return "SingularMap";
    case ErrorKind::BadFactor: return "BadFactor";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::EmptyCover: return "EmptyCover";
    case ErrorKind::BadDimension: return "BadDimension";
    case ErrorKind::BadRegion: return "BadRegion";
    case ErrorKind::NotFlat: return "NotFlat";
    case ErrorKind::NotInSublevel: return "NotInSublevel";
    case ErrorKind::ProjectionFailed: return "ProjectionFailed";
    case ErrorKind::InconclusiveFit: return "InconclusiveFit";
    case ErrorKind::BadSpec: return "BadSpec";
    case ErrorKind::BadRegime: return "BadRegime";
    case ErrorKind::BadParam: return "BadParam";
    case ErrorKind::DepthExceeded: return "DepthExceeded";
    case ErrorKind::NotNondegenerate: return "NotNondegenerate";
    case ErrorKind::NotADegeneracyDeterminant: return "NotADegeneracyDeterminant";
    case ErrorKind::CallbackContractViolation: return "CallbackContractViolation";
    case ErrorKind::ApproximationGuardFailed: return "ApproximationGuardFailed";
    case ErrorKind::NotMonotone: return "NotMonotone";
    case ErrorKind::UnsupportedFactor: return "UnsupportedFactor";
    case ErrorKind::ZeroSignal: return "ZeroSignal";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::Internal: return "Internal";
  }
  return "Unknown";
}

AffineMap AffineMap::identity(int n) { return AffineMap(Mat::Identity(n, n), Vec::Zero(n)); }

AffineMap AffineMap::inverse() const {
  if (matrix.rows() != matrix.cols()) throw Error(ErrorKind::DimMismatch, "inverse of non-square map");
  Eigen::FullPivLU<Mat> lu(matrix);
  if (!lu.isInvertible()) throw Error(ErrorKind::SingularMap, "affine map not invertible");
  Mat Ai = lu.inverse();
  return AffineMap(Ai, -Ai * offset);
}

AffineMap AffineMap::compose(const AffineMap& g) const {
  if (in_dim() != g.out_dim()) throw Error(ErrorKind::DimMismatch, "compose");
  return AffineMap(matrix * g.matrix, matrix * g.offset + offset);
}

Parallelogram::Parallelogram(Vec c, Mat d, Vec h)
    : center(std::move(c)), dirs(std::move(d)), half_lengths(std::move(h)) {}

Parallelogram Parallelogram::box(const Vec& lo, const Vec& hi) {
  const int n = static_cast<int>(lo.size());
  return Parallelogram(0.5 * (lo + hi), Mat::Identity(n, n), 0.5 * (hi - lo));
}

Parallelogram Parallelogram::cube(int n, double half) {
  return Parallelogram(Vec::Zero(n), Mat::Identity(n, n), Vec::Constant(n, half));
}

Vec Parallelogram::pullback(const Vec& x) const {
  return edge_matrix().partialPivLu().solve(x - center);
}

bool Parallelogram::contains_point(const Vec& x, double tol) const {
  if (x.size() != center.size()) throw Error(ErrorKind::DimMismatch, "point dimension");
  return pullback(x).cwiseAbs().maxCoeff() <= 1.0 + tol;
}

std::vector<Vec> Parallelogram::vertices() const {
  const int n = dim();
  const Mat E = edge_matrix();
  std::vector<Vec> out;
  out.reserve(std::size_t(1) << n);
  for (unsigned s = 0; s < (1u << n); ++s) {
    Vec v = center;
    for (int i = 0; i < n; ++i) v += ((s >> i) & 1u ? 1.0 : -1.0) * E.col(i);
    out.push_back(v);
  }
  return out;
}

void Parallelogram::bbox(Vec& lo, Vec& hi) const {
  Vec ext = edge_matrix().cwiseAbs().rowwise().sum();
  lo = center - ext;
  hi = center + ext;
}

double Parallelogram::volume() const {
  return std::abs(edge_matrix().determinant()) * std::pow(2.0, dim());
}

void Parallelogram::validate() const {
  const int n = dim();
  if (dirs.rows() != n || dirs.cols() != n || half_lengths.size() != n)
    throw Error(ErrorKind::DimMismatch, "parallelogram fields");
  for (int i = 0; i < n; ++i) {
    if (std::abs(dirs.col(i).norm() - 1.0) > 1e-12) throw Error(ErrorKind::BadRegion, "direction not unit");
    if (!(half_lengths(i) > 0)) throw Error(ErrorKind::BadRegion, "half length not positive");
  }
  if (std::abs(dirs.determinant()) <= 1e-12) throw Error(ErrorKind::BadRegion, "dependent directions");
}

Parallelogram pgram_from_affine(const AffineMap& lam) {
  const int n = lam.in_dim();
  if (lam.out_dim() != n) throw Error(ErrorKind::DimMismatch, "pgram_from_affine needs a square map");
  Eigen::FullPivLU<Mat> lu(lam.matrix);
  if (!lu.isInvertible() || std::abs(lam.matrix.determinant()) <= 1e-300)
    throw Error(ErrorKind::SingularMap, "pgram_from_affine");
  Vec h(n);
  Mat d(n, n);
  for (int i = 0; i < n; ++i) {
    h(i) = lam.matrix.col(i).norm();
    d.col(i) = lam.matrix.col(i) / h(i);
  }
  return Parallelogram(lam.offset, d, h);
}

Parallelogram affine_image(const AffineMap& lam, const Parallelogram& P) {
  return pgram_from_affine(lam.compose(P.to_affine()));
}

Parallelogram dilate(const Parallelogram& P, double C) {
  if (!(C > 0)) throw Error(ErrorKind::BadFactor, "dilation factor must be positive");
  Parallelogram Q = P;
  Q.half_lengths *= C;
  return Q;
}

bool contains(const Parallelogram& P, const Parallelogram& Q) {
  if (P.dim() != Q.dim()) throw Error(ErrorKind::DimMismatch, "contains");
  Eigen::PartialPivLU<Mat> lu(P.edge_matrix());
  for (const Vec& v : Q.vertices()) {
    if (lu.solve(v - P.center).cwiseAbs().maxCoeff() > 1.0 + kMembershipTol) return false;
  }
  return true;
}

bool equivalent(const Parallelogram& S, const Parallelogram& R, double C) {
  if (!(C >= 1.0)) throw Error(ErrorKind::BadFactor, "equivalence constant must be >= 1");
  return contains(S, dilate(R, 1.0 / C)) && contains(dilate(R, C), S);
}

double OverlapProfile::at(double mu) const {
  for (std::size_t i = 0; i < mus.size(); ++i)
    if (mus[i] >= mu - 1e-12) return counts[i];
  return counts.empty() ? 0.0 : counts.back();
}

Vec halton(std::uint64_t i, int n) {
  static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  Vec out(n);
  for (int j = 0; j < n; ++j) {
    const int b = primes[j % 12];
    double f = 1.0, r = 0.0;
    std::uint64_t k = i;
    while (k > 0) {
      f /= b;
      r += f * static_cast<double>(k % b);
      k /= b;
    }
    out(j) = r;
  }
  return out;
}

namespace {

// Uniform bucket grid over bounding boxes.
class BoxIndex {
 public:
  BoxIndex(const std::vector<Vec>& lo, const std::vector<Vec>& hi) : lo_(lo), hi_(hi) {
    n_ = static_cast<int>(lo[0].size());
    glo_ = lo[0];
    ghi_ = hi[0];
    for (std::size_t i = 1; i < lo.size(); ++i) {
      glo_ = glo_.cwiseMin(lo[i]);
      ghi_ = ghi_.cwiseMax(hi[i]);
    }
    const double per_axis = std::max(1.0, std::floor(std::pow(double(lo.size()), 1.0 / n_)));
    res_ = std::min(256, static_cast<int>(per_axis));
    cell_ = (ghi_ - glo_) / res_;
    for (int j = 0; j < n_; ++j)
      if (!(cell_(j) > 0)) cell_(j) = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) {
      std::vector<int> a = coords(lo[i]), b = coords(hi[i]);
      for_range(a, b, [&](long key) { buckets_[key].push_back(static_cast<int>(i)); });
    }
  }

  template <class F>
  void query_point(const Vec& x, F&& f) const {
    for (int j = 0; j < n_; ++j)
      if (x(j) < glo_(j) - 1e-9 * (1 + std::abs(glo_(j))) || x(j) > ghi_(j) + 1e-9 * (1 + std::abs(ghi_(j))))
        return;
    auto it = buckets_.find(key(coords(x)));
    if (it == buckets_.end()) return;
    for (int i : it->second) f(i);
  }

  // Candidate pairs (i<j) whose boxes share a bucket.
  std::vector<std::pair<int, int>> pairs() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& kv : buckets_) {
      const auto& v = kv.second;
      for (std::size_t a = 0; a < v.size(); ++a)
        for (std::size_t b = a + 1; b < v.size(); ++b) out.emplace_back(std::min(v[a], v[b]), std::max(v[a], v[b]));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  std::vector<int> coords(const Vec& x) const {
    std::vector<int> c(n_);
    for (int j = 0; j < n_; ++j)
      c[j] = std::clamp(static_cast<int>(std::floor((x(j) - glo_(j)) / cell_(j))), 0, res_ - 1);
    return c;
  }
  long key(const std::vector<int>& c) const {
    long k = 0;
    for (int j = 0; j < n_; ++j) k = k * res_ + c[j];
    return k;
  }
  template <class F>
  void for_range(const std::vector<int>& a, const std::vector<int>& b, F&& f) const {
    std::vector<int> c = a;
    while (true) {
      f(key(c));
      int j = 0;
      while (j < n_) {
        if (++c[j] <= b[j]) break;
        c[j] = a[j];
        ++j;
      }
      if (j == n_) break;
    }
  }

  const std::vector<Vec>& lo_;
  const std::vector<Vec>& hi_;
  int n_ = 0, res_ = 1;
  Vec glo_, ghi_, cell_;
  std::unordered_map<long, std::vector<int>> buckets_;
};

}  // namespace

struct CoverIndex::Impl {
  std::vector<Vec> lo, hi, centers;
  std::vector<Mat> inv;
  std::unique_ptr<BoxIndex> index;
};

CoverIndex::CoverIndex(const std::vector<Parallelogram>& cover) : impl_(std::make_unique<Impl>()) {
  if (cover.empty()) throw Error(ErrorKind::EmptyCover, "CoverIndex");
  const int n = cover[0].dim();
  Impl& m = *impl_;
  m.lo.resize(cover.size());
  m.hi.resize(cover.size());
  for (std::size_t i = 0; i < cover.size(); ++i) {
    if (cover[i].dim() != n) throw Error(ErrorKind::DimMismatch, "CoverIndex");
    cover[i].bbox(m.lo[i], m.hi[i]);
    const Vec pad = 1e-9 * (m.hi[i] - m.lo[i]) + Vec::Constant(n, 1e-300);
    m.lo[i] -= pad;
    m.hi[i] += pad;
    m.centers.push_back(cover[i].center);
    m.inv.push_back(cover[i].edge_matrix().inverse());
  }
  m.index = std::make_unique<BoxIndex>(m.lo, m.hi);
}

CoverIndex::~CoverIndex() = default;

int CoverIndex::count(const Vec& x, int* open) const {
  int c = 0, o = 0;
  impl_->index->query_point(x, [&](int i) {
    const double r = (impl_->inv[i] * (x - impl_->centers[i])).cwiseAbs().maxCoeff();
    if (r <= 1.0 + kMembershipTol) ++c;
    if (r < 1.0 - kMembershipTol) ++o;
  });
  if (open) *open = o;
  return c;
}

std::vector<std::pair<int, int>> CoverIndex::candidate_pairs() const { return impl_->index->pairs(); }

OverlapProfile overlap_profile(const std::vector<Parallelogram>& cover, const std::vector<double>& mus,
                               const ProbeSpec& probes) {
  if (cover.empty()) throw Error(ErrorKind::EmptyCover, "overlap_profile");
  const int n = cover[0].dim();
  for (const auto& P : cover)
    if (P.dim() != n) throw Error(ErrorKind::DimMismatch, "overlap_profile");
  OverlapProfile out;
  std::vector<double> sorted = mus;
  std::sort(sorted.begin(), sorted.end());
  double running = 0, running_open = 0;
  for (double mu : sorted) {
    if (!(mu >= 1.0)) throw Error(ErrorKind::BadFactor, "overlap dilation must be >= 1");
    std::vector<Parallelogram> D;
    D.reserve(cover.size());
    for (const auto& P : cover) D.push_back(dilate(P, mu));
    const CoverIndex index(D);
    int best = 0, best_open = 0;
    auto count_at = [&](const Vec& x) {
      int o = 0;
      const int c = index.count(x, &o);
      best_open = std::max(best_open, o);
      return c;
    };
    Vec glo, ghi;
    D[0].bbox(glo, ghi);
    for (const auto& P : D) {
      Vec a, b;
      P.bbox(a, b);
      glo = glo.cwiseMin(a);
      ghi = ghi.cwiseMax(b);
    }
    for (int s = 0; s < probes.lowdisc; ++s) {
      Vec u = halton(probes.seed * 7919u + s + 1, n);
      best = std::max(best, count_at(glo + (ghi - glo).cwiseProduct(u)));
    }
    if (probes.vertices)
      for (const auto& P : D)
        for (const Vec& v : P.vertices()) best = std::max(best, count_at(v));
    if (probes.midpoints)
      for (auto [i, j] : index.candidate_pairs()) best = std::max(best, count_at(0.5 * (D[i].center + D[j].center)));
    running = std::max(running, double(best));
    running_open = std::max(running_open, double(best_open));
    out.mus.push_back(mu);
    out.counts.push_back(running);
    out.open_counts.push_back(running_open);
  }
  return out;
}

OverlapProfile compose_overlap(const OverlapProfile& B, const OverlapProfile& Bp, double C2) {
  OverlapProfile out;
  out.mus = Bp.mus;
  for (std::size_t i = 0; i < Bp.mus.size(); ++i) out.counts.push_back(B.at(C2 * Bp.mus[i]) * Bp.counts[i]);
  out.open_counts = out.counts;
  return out;
}

OverlapProfile iterative_overlap(const NestedMeshSchedule& s, int level, const std::vector<double>& mus) {
  if (level < 1 || level > s.N || static_cast<int>(s.inner.size()) < level)
    throw Error(ErrorKind::BadParam, "level out of range");
  OverlapProfile out;
  out.mus = mus;
  for (double mu : mus) {
    double prod = 1.0;
    for (int ip = 1; ip <= level; ++ip) prod *= s.inner[ip - 1].at(std::pow(s.C2, level - ip) * mu);
    out.counts.push_back(prod);
  }
  return out;
}

bool mesh_containment_check(const NestedMeshSchedule& s, int N0) {
  if (N0 < 1) throw Error(ErrorKind::BadParam, "N0 must be >= 1");
  if (s.N < 1 || s.C1 < 1.0 || s.C2 < s.C1) throw Error(ErrorKind::BadParam, "bad schedule");
  return double(N0) >= std::pow(s.C2, s.N - 1) * (1.0 - 1e-12);
}

}  // namespace flatcover
