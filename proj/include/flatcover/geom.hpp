#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flatcover/error.hpp"

namespace flatcover {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kMembershipTol = 1e-10;

struct AffineMap {
  Mat matrix;
  Vec offset;

  AffineMap() = default;
  AffineMap(Mat A, Vec b) : matrix(std::move(A)), offset(std::move(b)) {}

  static AffineMap identity(int n);
  int in_dim() const { return static_cast<int>(matrix.cols()); }
  int out_dim() const { return static_cast<int>(matrix.rows()); }
  Vec operator()(const Vec& x) const { return matrix * x + offset; }
  AffineMap inverse() const;
  // (*this) o g
  AffineMap compose(const AffineMap& g) const;
};

// P = { c + sum_i t_i h_i d_i : |t_i| <= 1 }, d_i the columns of dirs.
struct Parallelogram {
  Vec center;
  Mat dirs;
  Vec half_lengths;

  Parallelogram() = default;
  Parallelogram(Vec c, Mat d, Vec h);

  static Parallelogram box(const Vec& lo, const Vec& hi);
  static Parallelogram cube(int n, double half = 1.0);

  int dim() const { return static_cast<int>(center.size()); }
  Mat edge_matrix() const { return dirs * half_lengths.asDiagonal(); }
  // lambda_R : [-1,1]^n -> R
  AffineMap to_affine() const { return AffineMap(edge_matrix(), center); }
  Vec pullback(const Vec& x) const;
  bool contains_point(const Vec& x, double tol = kMembershipTol) const;
  std::vector<Vec> vertices() const;
  // Axis-aligned bounding box.
  void bbox(Vec& lo, Vec& hi) const;
  // Width along each edge direction: 2 h_i.
  double min_side() const { return 2.0 * half_lengths.minCoeff(); }
  double volume() const;
  void validate() const;
};

Parallelogram pgram_from_affine(const AffineMap& lam);
Parallelogram affine_image(const AffineMap& lam, const Parallelogram& P);
Parallelogram dilate(const Parallelogram& P, double C);
bool contains(const Parallelogram& P, const Parallelogram& Q);
bool equivalent(const Parallelogram& S, const Parallelogram& R, double C);

// Bucketed point location over a cover.
class CoverIndex {
 public:
  explicit CoverIndex(const std::vector<Parallelogram>& cover);
  ~CoverIndex();
  // Members containing x (closed membership); interior count in *open if given.
  int count(const Vec& x, int* open = nullptr) const;
  // Pairs (i < j) whose padded bounding boxes share a bucket.
  std::vector<std::pair<int, int>> candidate_pairs() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct OverlapProfile {
  std::vector<double> mus;
  std::vector<double> counts;       // closed membership
  std::vector<double> open_counts;  // interior membership

  // Conservative lookup: value at the smallest grid mu >= query (last value past the end).
  double at(double mu) const;
};

struct ProbeSpec {
  int lowdisc = 4096;
  std::uint64_t seed = 0;
  bool vertices = true;
  bool midpoints = true;
};

OverlapProfile overlap_profile(const std::vector<Parallelogram>& cover, const std::vector<double>& mus,
                               const ProbeSpec& probes = {});
// B''(mu) = B(C2 mu) B'(mu) on the grid of Bp.
OverlapProfile compose_overlap(const OverlapProfile& B, const OverlapProfile& Bp, double C2);

struct NestedMeshSchedule {
  int N = 1;
  std::vector<OverlapProfile> inner;  // Bbar_1..Bbar_N; Bbar_1 is the overlap of level 1 itself
  double C1 = 1.0;
  double C2 = 1.0;
};

// B_i(mu) = prod_{i'=1..i} Bbar_{i'}(C2^{i-i'} mu): compose_overlap applied level by level.
OverlapProfile iterative_overlap(const NestedMeshSchedule& s, int level, const std::vector<double>& mus);
bool mesh_containment_check(const NestedMeshSchedule& s, int N0);

// Halton point in [0,1)^n, index i >= 1.
Vec halton(std::uint64_t i, int n);

}  // namespace flatcover
