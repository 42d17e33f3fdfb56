// Measures on Cantor trees and the scalar coefficients built from them:
// densities Theta and Theta_d, the ancestor-smoothed p(Q) and p(Q,R), the
// energy sigma, the stop-family coefficients q(Q,T), and weighted point-cloud
// discretizations.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cantor/geometry.hpp"

namespace cantor {

struct MeasureError : std::runtime_error {
  enum class Kind {
    InconsistentPrescription,
    NegativeMass,
    UnknownCube,
    NotAnAncestor,
    OverlappingStopFamily,
    EmptyStopFamily,
    ZeroDensity,
    BadRule,
  };
  Kind kind;
  MeasureError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct MassRule {
  enum class Kind { UniformSplit, WeightedSplit, RandomSplit, Prescribed };
  Kind kind = Kind::UniformSplit;
  std::vector<double> weights;       // WeightedSplit: one weight per child index
  double concentration = 1.0;        // RandomSplit: Dirichlet concentration
  std::uint64_t seed = 0;            // RandomSplit
  std::unordered_map<NodeIdx, double> table;  // Prescribed: cube -> mass
  double total = 1.0;                // total mass for the split rules

  static MassRule uniform() { return {}; }
  static MassRule weighted(std::vector<double> w);
  static MassRule random(double concentration, std::uint64_t seed);
  static MassRule prescribed(std::unordered_map<NodeIdx, double> t);
};

class DyadicMeasure {
 public:
  DyadicMeasure() = default;
  DyadicMeasure(const CantorTree& tree, std::vector<double> mass);

  const CantorTree& tree() const { return *tree_; }
  double mass(NodeIdx q) const { return mass_[q]; }
  double total() const { return mass_[0]; }
  std::span<const double> masses() const { return mass_; }

  // scaled copy (same tree)
  DyadicMeasure scaled(double lambda) const;

 private:
  const CantorTree* tree_ = nullptr;
  std::vector<double> mass_;
};

DyadicMeasure assign_measure(const CantorTree& tree, const MassRule& rule);

// Theta(Q) = mu(Q) / ell(Q)^s
double theta(const DyadicMeasure& mu, NodeIdx q);
// Theta_d(Q) = 2^j with 2^j <= Theta(Q) < 2^{j+1}
double theta_dyadic(const DyadicMeasure& mu, NodeIdx q);
double dyadic_floor(double x);  // exact binary exponent extraction

// p(Q) = sum over stored ancestors P >= Q of (ell(Q)/ell(P)) Theta(P);
// with r given the chain is truncated at r. The root truncates the sum in
// either case (the tree is all we store).
double p_coefficient(const DyadicMeasure& mu, NodeIdx q,
                     std::optional<NodeIdx> r = std::nullopt);
bool is_p_doubling(const DyadicMeasure& mu, NodeIdx q, double c_db);

// sigma(T) = sum_{Q in T} Theta(Q)^2 mu(Q)
double sigma(const DyadicMeasure& mu, std::span<const NodeIdx> family);

// q(Q,T) = sum_{P in T} ell(P) mu(P) / D(P,Q)^{s+1},
// D(P,Q) = ell(P) + dist(P,Q) + ell(Q); dist between closed cube regions.
// The family must be pairwise non-overlapping.
double q_coefficient(const DyadicMeasure& mu, NodeIdx q,
                     std::span<const NodeIdx> stop_family);

// Eagerly computed per-cube Theta, Theta_d and p. Immutable afterwards, safe
// to share across threads.
class CoefficientTable {
 public:
  explicit CoefficientTable(const DyadicMeasure& mu);
  double theta(NodeIdx q) const { return theta_[q]; }
  double theta_dyadic(NodeIdx q) const { return theta_d_[q]; }
  double p(NodeIdx q) const { return p_[q]; }
  double sup_theta() const { return sup_theta_; }

 private:
  std::vector<double> theta_, theta_d_, p_;
  double sup_theta_ = 0.0;
};

struct PointCloud {
  enum class Provenance { LeafRepresentatives, EtaSamples };
  int dim = 0;
  Provenance provenance = Provenance::LeafRepresentatives;
  std::vector<double> points;   // flat d-stride
  std::vector<double> weights;
  std::vector<NodeIdx> owner;
  std::size_t size() const { return weights.size(); }
  std::span<const double> point(std::size_t i) const {
    return {points.data() + i * dim, std::size_t(dim)};
  }
  double total_weight() const;
};

enum class DiscretizeMode { LeafRepresentatives, EtaSamples };

// LeafRepresentatives: samples_per_cube points per leaf, each of weight
// mu(leaf)/samples. EtaSamples: the same per stop cube, approximating the
// uniform density mu(P)/vol(P) on P. Points are cube centroids for one
// sample, a fixed Halton lattice inside the cube otherwise.
PointCloud discretize(const DyadicMeasure& mu, DiscretizeMode mode,
                      int samples_per_cube,
                      std::span<const NodeIdx> stop_family = {});

// mass of the closed ball B(x, r) under the leaf-representative view
double ball_mass(const DyadicMeasure& mu, std::span<const double> x, double r);

// Halton point i (bases 2,3,5,...) in [0,1)^d
void halton_point(std::uint64_t i, int d, double* out);

}  // namespace cantor
