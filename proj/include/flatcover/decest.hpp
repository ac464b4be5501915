#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flatcover/partition.hpp"

namespace flatcover {

struct TorusGrid {
  int n = 2;
  int N = 256;  // points per axis, power of two
  double delta = 1.0 / 16;

  void validate() const;
  // Each vertical fiber of the neighbourhood spans >= 4 lattice steps when the graph range is 2.
  bool resolves_fibers() const { return N * delta >= 4; }
};

struct FreqTile {
  int cell = 0;
  std::vector<std::vector<int>> points;  // lattice coordinates in [0, N)^n
};

struct FreqTileSet {
  int n = 0, N = 0;
  std::vector<FreqTile> tiles;  // nonempty tiles only
  std::vector<int> dropped;     // cells that received no lattice point
  long total_points = 0;
  Vec lo, step;  // lattice point xi sits at lo + (xi + 1/2) step
};

// Lattice frequencies inside each cell's part of the delta-neighbourhood of the graph of phi; first cell wins.
FreqTileSet discretize(const PolyMap& phi, const PartitionOutput& cover, const TorusGrid& grid);

using Coeffs = std::vector<std::vector<std::complex<double>>>;  // per tile, per point

// Trial 0 is all ones; trial t > 0 has unimodular phases seeded by (seed, t).
Coeffs draw_coefficients(const FreqTileSet& tiles, int trial, std::uint64_t seed);

struct DecNorms {
  double sum;                 // ||sum f_R||_p
  std::vector<double> tiles;  // ||f_R||_p
};
// Normalized (grid-mean) L^p norms of the synthesized signals; p may be infinite.
DecNorms dec_norms(const FreqTileSet& tiles, const Coeffs& a, double p);

// ||sum f_R||_p / ((#R)^(1/2 - 1/q + alpha) ||(||f_R||_p)_R||_q); p or q may be infinite.
double dec_ratio(const FreqTileSet& tiles, const Coeffs& a, double p, double q, double alpha);

struct DecEstimate {
  double ratio_max = 0;
  int argmax = 0;  // trial achieving ratio_max
  int trials = 0;
  std::uint64_t seed = 0;
  double p = 2, q = 2, alpha = 0;
  std::vector<double> ratios;
};

// trials random draws plus the all-ones draw.
DecEstimate estimate_dec(const FreqTileSet& tiles, double p, double q, double alpha, int trials = 32,
                         std::uint64_t seed = 0);

struct SweepRow {
  double delta;
  double ratio_max;
  int tiles;
  int dropped;
  int argmax = 0;  // replay with draw_coefficients(tiles, argmax, seed)
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double slope = 0;  // fit of log ratio_max against log(1/delta)
  double intercept = 0;
  double p = 2, q = 2, alpha = 0;
  std::uint64_t seed = 0;

  std::string csv() const;
};

SweepRow sweep_row(const PolyMap& phi, const PartitionOutput& cover, double delta, int N, double p, double q,
                   double alpha, int trials = 32, std::uint64_t seed = 0);
// Least squares of log ratio_max on log(1/delta); needs >= 3 rows spanning >= 2 octaves.
void fit_sweep(SweepResult& s);

using CoverGenerator = std::function<PartitionOutput(double delta)>;

SweepResult sweep(const PolyMap& phi, const CoverGenerator& gen, const std::vector<double>& deltas, int N, double p,
                  double q, double alpha, int trials = 32, std::uint64_t seed = 0);

// [lo, hi] cut into ceil((hi - lo) / len) equal intervals.
PartitionOutput interval_cover(double len, double lo = -1, double hi = 1);

}  // namespace flatcover
