// The s-Riesz kernel K(x) = x / |x|^{s+1}, truncated and suppressed
// transforms of weighted point clouds (direct and treecode-accelerated),
// the discrete L^2(mu) energy with leaf self-exclusion, cube means of the
// transform, and the martingale block decomposition D_Q.
#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cantor/geometry.hpp"
#include "cantor/measure.hpp"

namespace cantor {

struct RieszError : std::runtime_error {
  enum class Kind {
    SingularEvaluation,
    EmptyCloud,
    InvalidOpening,
    DepthZero,
    UnknownCube,
    MissingLeafValue,
    BadMode,
  };
  Kind kind;
  RieszError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// scalar suppression field; must be 1-Lipschitz and non-negative by the
// caller's contract
using SuppressionField = std::function<double(std::span<const double>)>;

struct KernelParams {
  double s = 1.5;
  double epsilon = 0.0;
  SuppressionField suppression;  // empty = plain truncated kernel
};

// K^s(x-y), or K_Phi(x,y) = (x-y) / (|x-y|^2 + Phi(x)Phi(y))^{(s+1)/2}
void kernel_eval(std::span<const double> x, std::span<const double> y,
                 const KernelParams& params, std::span<double> out);

enum class FieldMode { Direct, Treecode };

struct TreecodeOptions {
  double theta_open = 0.4;  // accept a cell when diam(cell)/dist < theta_open
  int cheb_order = 8;       // Chebyshev nodes per dimension
  int min_points = 64;      // below this a cell is summed directly
};

struct RieszField {
  int dim = 0;
  FieldMode mode = FieldMode::Direct;
  double theta_open = 0.0;
  double epsilon = 0.0;
  std::vector<double> values;  // flat d-stride per evaluation point
  std::span<const double> value(std::size_t i) const {
    return {values.data() + i * dim, std::size_t(dim)};
  }
};

// Treecode spatial index over the Cantor hierarchy: cloud points are binned
// into their owner cubes and far cells are applied through tensor Chebyshev
// equivalent weights. Immutable after construction.
class TreecodeIndex {
 public:
  TreecodeIndex(const CantorTree& tree, const PointCloud& cloud,
                const TreecodeOptions& opts);

  // field at x, excluding points owned by `excluded` (pass kNoNode for none)
  void eval(std::span<const double> x, const KernelParams& params,
            NodeIdx excluded, std::span<double> out) const;

  const TreecodeOptions& options() const { return opts_; }

 private:
  const CantorTree* tree_;
  TreecodeOptions opts_;
  int dim_;
  std::vector<double> pts_;     // reordered cloud, flat d-stride
  std::vector<double> wts_;
  std::vector<NodeIdx> owner_;
  std::vector<std::int64_t> lo_, hi_;      // per node: point range
  std::vector<std::int64_t> exp_off_;      // per node: expansion offset or -1
  std::vector<double> exp_w_;              // expansion weights, n^d blocks
  std::int64_t block_ = 0;                 // n^d

  void cheb_nodes(NodeIdx q, std::vector<double>& out) const;
  void build_expansions();
};

// Truncated/suppressed transform of a cloud at the given evaluation points.
// Direct mode sums pairs with |x-y| > epsilon in cloud order with compensated
// accumulation; treecode mode approximates well-separated cells. `excluded`
// (optional, per evaluation point) removes the points owned by that cube.
RieszField riesz_field(const PointCloud& cloud,
                       std::span<const double> eval_points,
                       const KernelParams& params, FieldMode mode,
                       const TreecodeOptions& opts = {}, int threads = 1,
                       const CantorTree* tree = nullptr,
                       std::span<const NodeIdx> excluded = {});

// Per-leaf field F(P) = R(chi_{E \ P} mu)(z_P) at the leaf centroids, plus
// the cube means m_Q(R mu) aggregated up the tree. Built once, queried from
// anywhere (corona, energy, martingale input).
class LeafFieldTable {
 public:
  LeafFieldTable(const CantorTree& tree, const DyadicMeasure& mu,
                 const KernelParams& params, FieldMode mode,
                 const TreecodeOptions& opts = {}, int threads = 1);

  std::span<const double> leaf_field(std::int64_t leaf_offset) const {
    return {leaf_.data() + std::size_t(leaf_offset) * dim_, std::size_t(dim_)};
  }
  // m_Q(R mu) for any cube
  std::span<const double> mean(NodeIdx q) const {
    return {mean_.data() + std::size_t(q) * dim_, std::size_t(dim_)};
  }
  double mean_norm(NodeIdx q) const;
  const std::vector<double>& leaf_values() const { return leaf_; }
  int dim() const { return dim_; }

 private:
  int dim_;
  std::vector<double> leaf_;  // leaf_count x d
  std::vector<double> mean_;  // node_count x d
};

// E_K = sum over leaves P of mu(P) * mean over quadrature points z of
// |R(chi_{E \ P} mu)(z)|^2. Order 1 evaluates at the leaf centroid.
double riesz_energy(const CantorTree& tree, const DyadicMeasure& mu,
                    const KernelParams& params, int quadrature_order,
                    FieldMode mode = FieldMode::Direct,
                    const TreecodeOptions& opts = {}, int threads = 1);

// m_Q(R mu) with the same leaf-exclusion convention as riesz_energy
std::vector<double> riesz_mean(const CantorTree& tree, const DyadicMeasure& mu,
                               NodeIdx q, const KernelParams& params,
                               FieldMode mode = FieldMode::Direct,
                               const TreecodeOptions& opts = {},
                               int threads = 1);

struct MartingaleDecomposition {
  int ncomp = 0;
  std::vector<double> coarse_mean;        // m_{Q^0} f
  std::vector<double> block_norm2;        // per cube: ||D_Q f||^2 (0 on leaves)
  std::vector<double> cube_mean;          // per cube x ncomp: m_Q f
  double f_norm2 = 0.0;                   // ||f||^2_{L^2(mu)}
  double mean_term = 0.0;                 // mu(E) |m_{Q^0} f|^2
  double sum_blocks = 0.0;                // sum_Q ||D_Q f||^2
};

// f given per leaf (ncomp components, flat). Satisfies
// ||f||^2 = mu(E) |m_{Q^0} f|^2 + sum_Q ||D_Q f||^2.
MartingaleDecomposition martingale_decompose(const CantorTree& tree,
                                             const DyadicMeasure& mu,
                                             std::span<const double> leaf_values,
                                             int ncomp);

}  // namespace cantor
