// Uniformly disconnected Cantor trees in R^d: construction, validation and
// affine transforms. A tree is the cube family D of the construction, stored
// generation by generation with axis-aligned cubes.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cantor {

using NodeIdx = std::int32_t;
inline constexpr NodeIdx kNoNode = -1;

// ell(Q) can mean the cube side or its diameter (side * sqrt(d)). All density
// and kernel formulas go through this single choice.
enum class LengthConvention { Side, Diam };

struct SpecViolation : std::runtime_error {
  enum class Kind { Ratio, Separation, Containment, Parameter };
  Kind kind;
  SpecViolation(Kind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

struct NonPositiveScale : std::runtime_error {
  NonPositiveScale() : std::runtime_error("transform scale must be positive") {}
};

// Declarative description of one construction. Layout presets:
//   "grid8"   : d=2, the 8 non-center cells of the 3x3 subdivision
//   "corners" : the 2^d corner cells
//   "explicit": child centers from layout_offsets (parent-relative units,
//               coordinates in (-1/2, 1/2), flat d-stride)
// jitter > 0 perturbs child centers inside their slack box and random_ratios
// draws each child ratio from [ratio_min, ratio_max]; both are rejection
// sampled against the separation constraint.
struct CantorSpec {
  int dimension = 2;
  double s = 1.5;
  std::string layout = "grid8";
  std::vector<double> layout_offsets;
  double ratio = 0.25;
  double ratio_min = 1.0 / 8.0;
  double ratio_max = 1.0 / 3.0;
  bool random_ratios = false;
  double jitter = 0.0;
  double c_sep = 0.05;
  int depth = 3;
  std::uint64_t seed = 0;
  LengthConvention length_convention = LengthConvention::Diam;
  std::vector<double> root_center;  // empty = origin
  double root_side = 1.0;
  int retry_cap = 1000;

  // throws SpecViolation(Parameter) on malformed fields
  void check() const;
  // child placements for this layout, parent-relative (ignores jitter)
  std::vector<double> base_offsets() const;
};

struct ValidationIssue {
  enum class Kind { Ratio, Separation, Containment, ChildCount };
  Kind kind;
  NodeIdx cube = kNoNode;
  NodeIdx other = kNoNode;  // second cube for separation pairs
  double value = 0.0;
  double bound = 0.0;
  std::string describe() const;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  // inf over cubes of dist(Q, E \ Q) / ell(Q), via sibling-subtree boxes
  // (a certified lower bound for the true set distance)
  double isolation_constant = 0.0;
  // inf over sibling pairs of dist(C, C') / ell(parent)
  double separation_constant = 0.0;
  // observed child ratio range over all edges
  double ratio_lo = 0.0, ratio_hi = 0.0;
  int max_children = 0;
  int child_count_bound = 0;  // packing bound from (ratio_min, c_sep, d)
  bool ok() const { return issues.empty(); }
};

class CantorTree {
 public:
  CantorTree() = default;

  int dim() const { return spec_.dimension; }
  int depth() const { return spec_.depth; }
  const CantorSpec& spec() const { return spec_; }

  std::size_t node_count() const { return side_.size(); }
  NodeIdx root() const { return 0; }
  int generation(NodeIdx q) const { return gen_[q]; }
  std::span<const double> center(NodeIdx q) const {
    return {centers_.data() + std::size_t(q) * dim(), std::size_t(dim())};
  }
  double side(NodeIdx q) const { return side_[q]; }
  double ell(NodeIdx q) const { return side_[q] * ell_factor_; }
  double ell_factor() const { return ell_factor_; }
  NodeIdx parent(NodeIdx q) const { return parent_[q]; }
  std::span<const NodeIdx> children(NodeIdx q) const {
    return {child_list_.data() + child_lo_[q],
            std::size_t(child_hi_[q] - child_lo_[q])};
  }
  bool is_leaf(NodeIdx q) const { return child_lo_[q] == child_hi_[q]; }

  // leaves are the generation-depth cubes and occupy the tail of the storage
  NodeIdx leaf_begin() const { return level_offset_[spec_.depth]; }
  std::size_t leaf_count() const { return node_count() - leaf_begin(); }
  NodeIdx level_begin(int g) const { return level_offset_[g]; }
  NodeIdx level_end(int g) const { return level_offset_[g + 1]; }

  // subtree leaf range [lo, hi) as offsets from leaf_begin()
  std::int64_t subtree_leaf_lo(NodeIdx q) const { return leaf_lo_[q]; }
  std::int64_t subtree_leaf_hi(NodeIdx q) const { return leaf_hi_[q]; }

  bool contains(NodeIdx ancestor, NodeIdx q) const {
    return leaf_lo_[ancestor] <= leaf_lo_[q] && leaf_hi_[q] <= leaf_hi_[ancestor];
  }

  // Euclidean distance between the closed cube regions (0 when they meet)
  double cube_dist(NodeIdx a, NodeIdx b) const;
  double point_dist(std::span<const double> x, NodeIdx q) const;

  friend CantorTree build_cantor(const CantorSpec& spec);
  friend CantorTree transform_tree(const CantorTree& tree, double t,
                                   std::span<const double> shift);

 private:
  CantorSpec spec_;
  double ell_factor_ = 1.0;
  std::vector<double> centers_;  // flat, d-stride
  std::vector<double> side_;
  std::vector<int> gen_;
  std::vector<NodeIdx> parent_;
  std::vector<std::size_t> child_lo_, child_hi_;
  std::vector<NodeIdx> child_list_;
  std::vector<NodeIdx> level_offset_;
  std::vector<std::int64_t> leaf_lo_, leaf_hi_;

  void finalize();
};

CantorTree build_cantor(const CantorSpec& spec);
ValidationReport validate_tree(const CantorTree& tree);
CantorTree transform_tree(const CantorTree& tree, double t,
                          std::span<const double> shift);

// packing bound on the number of children a cube can host given the ratio
// floor and the separation constant
int child_count_bound(const CantorSpec& spec);

}  // namespace cantor
