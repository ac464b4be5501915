#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "flatcover/poly.hpp"

namespace flatcover {

enum class Sense { Graph, F1, F2, F3 };

const char* sense_name(Sense s);
Sense sense_from_name(const std::string& s);

// Reported bounds are grid sups; `certified` adds the certification margin.
inline constexpr double kCertMargin = 1.05;

struct FlatnessWitness {
  Sense sense = Sense::F1;
  int m = 0;
  Mat Uprime;                  // (n-m) x (n-k), or (n-m) x n for Graph
  std::optional<AffineMap> L;  // R^k -> R^(n-k); absent for F2/F3
  double bound = 0;
  double certified = 0;
};

struct FlatOptions {
  int per_axis = 33;   // F1 / Graph grid
  int pair_axis = 13;  // F2 point grid (pairs are all ordered pairs)
  int f3_axis = 17;    // F3 base points
  int directions = 64; // F3 directions (k = 2); Fibonacci sphere for k >= 3
  int restarts = 8;
  int steps = 50;
  std::uint64_t seed = 0;
  bool refine = true;
};

FlatnessWitness flat_f1(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o = {});
FlatnessWitness flat_f2(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o = {});
FlatnessWitness flat_f3(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o = {});
FlatnessWitness flat_graph(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o = {});

// Fast scalar path (l = 1, m = k): best affine fit error on omega.
double f1_scalar(const PolyScalar& p, const Parallelogram& omega, int per_axis = 17);

struct FlatDecomposition {
  Mat U;  // l x l orthogonal; first n-m rows are the flat directions
  PolyMap psi;
  AffineMap L;
  Vec sigma;
};

// U phi = diag(sigma) psi + L on [-1,1]^k; psi components have max |coefficient| 1 (or vanish).
FlatDecomposition flat_decompose(const PolyMap& phi, int m, double delta, const FlatOptions& o = {});
PolyMap recombine(const FlatDecomposition& dec);

struct RatioCheck {
  double ratio;
  bool inconsistent;  // F1 = 0 but F3 > 0
};

RatioCheck check_f1_to_f3(const PolyMap& phi, const Parallelogram& omega, int m, const FlatOptions& o = {});

// Minimizes sup_j |U s_j (+ b)| over U with r orthonormal rows; samples are the rows of S.
struct StiefelResult {
  Mat U;
  Vec b;
  double value;
};
StiefelResult min_sup_stiefel(const Mat& S, int r, bool free_offset, int restarts, int steps, std::uint64_t seed,
                              const Mat* init = nullptr);

// Longest |t| with u + t w in [-1,1]^k.
double cube_chord(const Vec& u, const Vec& w);

}  // namespace flatcover
