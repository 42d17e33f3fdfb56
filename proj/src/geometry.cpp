#include "cantor/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace cantor {

namespace {

double sq(double x) { return x * x; }

struct ChildPlacement {
  std::vector<double> offsets;  // flat d-stride, parent-relative
  std::vector<double> ratios;   // per child
};

int layout_child_count(const CantorSpec& spec) {
  if (spec.layout == "grid8") return 8;
  if (spec.layout == "corners") return 1 << spec.dimension;
  if (spec.layout == "explicit")
    return int(spec.layout_offsets.size()) / spec.dimension;
  throw SpecViolation(SpecViolation::Kind::Parameter,
                      "unknown layout preset: " + spec.layout);
}

// Draws one admissible family of children for a parent, or throws after the
// retry cap. The rng is consumed even for deterministic layouts only when
// jitter/random ratios are on, so fixed specs stay independent of the seed.
ChildPlacement place_children(const CantorSpec& spec, std::mt19937_64& rng) {
  const int d = spec.dimension;
  const int n = layout_child_count(spec);
  const bool randomized = spec.jitter > 0.0 || spec.random_ratios;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double sep_side = spec.c_sep * (spec.length_convention == LengthConvention::Diam
                                            ? std::sqrt(double(d))
                                            : 1.0);

  ChildPlacement pl;
  pl.offsets.resize(std::size_t(n) * d);
  pl.ratios.resize(n);

  const int attempts = randomized ? spec.retry_cap : 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    for (int i = 0; i < n; ++i) {
      pl.ratios[i] = spec.random_ratios
                         ? spec.ratio_min + (spec.ratio_max - spec.ratio_min) * unit(rng)
                         : spec.ratio;
    }

    if (spec.layout == "grid8") {
      static const double cell[3] = {-1.0 / 3.0, 0.0, 1.0 / 3.0};
      int c = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          if (i == 1 && j == 1) continue;
          const double slack = 1.0 / 6.0 - pl.ratios[c] / 2.0;
          double* off = pl.offsets.data() + std::size_t(c) * d;
          off[0] = cell[i];
          off[1] = cell[j];
          if (spec.jitter > 0.0)
            for (int k = 0; k < d; ++k)
              off[k] += (2.0 * unit(rng) - 1.0) * spec.jitter * std::max(0.0, slack);
          ++c;
        }
    } else if (spec.layout == "corners") {
      for (int i = 0; i < n; ++i) {
        double* off = pl.offsets.data() + std::size_t(i) * d;
        const double rho = pl.ratios[i];
        for (int k = 0; k < d; ++k) {
          const double sign = (i >> k) & 1 ? 1.0 : -1.0;
          double inset = 0.0;
          if (spec.jitter > 0.0)
            inset = unit(rng) * spec.jitter * std::max(0.0, 0.5 - rho) * 0.5;
          off[k] = sign * (0.5 - rho / 2.0 - inset);
        }
      }
    } else {  // explicit
      for (int i = 0; i < n; ++i) {
        double* off = pl.offsets.data() + std::size_t(i) * d;
        const double rho = pl.ratios[i];
        for (int k = 0; k < d; ++k) {
          const double base = spec.layout_offsets[std::size_t(i) * d + k];
          double delta = 0.0;
          if (spec.jitter > 0.0) {
            const double slack = std::max(0.0, 0.5 - rho / 2.0 - std::abs(base));
            delta = (2.0 * unit(rng) - 1.0) * spec.jitter * slack;
          }
          off[k] = base + delta;
        }
      }
    }

    // containment in parent units
    bool ok = true;
    for (int i = 0; i < n && ok; ++i)
      for (int k = 0; k < d; ++k) {
        const double ext = std::abs(pl.offsets[std::size_t(i) * d + k]) + pl.ratios[i] / 2.0;
        if (ext > 0.5 + 1e-15) {
          if (!randomized)
            throw SpecViolation(SpecViolation::Kind::Containment,
                                "layout places a child outside its parent");
          ok = false;
          break;
        }
      }

    // pairwise separation: dist(C, C') >= c_sep * ell(parent)
    for (int i = 0; i < n && ok; ++i)
      for (int j = i + 1; j < n && ok; ++j) {
        double dist2 = 0.0;
        for (int k = 0; k < d; ++k) {
          const double gap = std::abs(pl.offsets[std::size_t(i) * d + k] -
                                      pl.offsets[std::size_t(j) * d + k]) -
                             (pl.ratios[i] + pl.ratios[j]) / 2.0;
          if (gap > 0.0) dist2 += sq(gap);
        }
        if (std::sqrt(dist2) < sep_side - 1e-15) {
          if (!randomized)
            throw SpecViolation(SpecViolation::Kind::Separation,
                                "sibling pair violates dist >= c_sep * ell(parent)");
          ok = false;
        }
      }

    if (ok) return pl;
  }
  throw SpecViolation(SpecViolation::Kind::Separation,
                      "no admissible child placement within retry cap");
}

}  // namespace

void CantorSpec::check() const {
  if (dimension < 1)
    throw SpecViolation(SpecViolation::Kind::Parameter, "dimension must be >= 1");
  if (!(s > dimension - 1 && s < dimension))
    throw SpecViolation(SpecViolation::Kind::Parameter,
                        "s must satisfy d-1 < s < d strictly");
  if (!(ratio_min > 0 && ratio_min <= ratio_max && ratio_max < 1))
    throw SpecViolation(SpecViolation::Kind::Parameter, "bad ratio bounds");
  if (!random_ratios && (ratio < ratio_min - 1e-15 || ratio > ratio_max + 1e-15))
    throw SpecViolation(SpecViolation::Kind::Ratio,
                        "ratio outside [ratio_min, ratio_max]");
  if (!(c_sep > 0.0))
    throw SpecViolation(SpecViolation::Kind::Parameter, "c_sep must be positive");
  if (depth < 0)
    throw SpecViolation(SpecViolation::Kind::Parameter, "depth must be >= 0");
  if (root_side <= 0.0)
    throw SpecViolation(SpecViolation::Kind::Parameter, "root_side must be positive");
  if (!root_center.empty() && int(root_center.size()) != dimension)
    throw SpecViolation(SpecViolation::Kind::Parameter, "root_center dimension mismatch");
  if (jitter < 0.0 || jitter > 1.0)
    throw SpecViolation(SpecViolation::Kind::Parameter, "jitter must lie in [0,1]");
  if (layout == "grid8" && dimension != 2)
    throw SpecViolation(SpecViolation::Kind::Parameter, "grid8 requires d = 2");
  if (layout == "explicit") {
    if (layout_offsets.empty() || layout_offsets.size() % dimension != 0)
      throw SpecViolation(SpecViolation::Kind::Parameter,
                          "explicit layout needs offsets, flat d-stride");
  } else if (layout != "grid8" && layout != "corners") {
    throw SpecViolation(SpecViolation::Kind::Parameter,
                        "unknown layout preset: " + layout);
  }
}

std::vector<double> CantorSpec::base_offsets() const {
  const int d = dimension;
  std::vector<double> out;
  if (layout == "grid8") {
    static const double cell[3] = {-1.0 / 3.0, 0.0, 1.0 / 3.0};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == 1 && j == 1) continue;
        out.push_back(cell[i]);
        out.push_back(cell[j]);
      }
  } else if (layout == "corners") {
    const int n = 1 << d;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k)
        out.push_back(((i >> k) & 1 ? 1.0 : -1.0) * (0.5 - ratio / 2.0));
  } else {
    out = layout_offsets;
  }
  return out;
}

void CantorTree::finalize() {
  const int K = spec_.depth;
  level_offset_.assign(K + 2, 0);
  for (int g : gen_) ++level_offset_[g + 1];
  for (int g = 0; g <= K; ++g) level_offset_[g + 1] += level_offset_[g];

  const NodeIdx n = NodeIdx(node_count());
  leaf_lo_.assign(n, 0);
  leaf_hi_.assign(n, 0);
  const NodeIdx lb = leaf_begin();
  for (NodeIdx q = n - 1; q >= 0; --q) {
    if (is_leaf(q)) {
      leaf_lo_[q] = q - lb;
      leaf_hi_[q] = q - lb + 1;
    } else {
      auto ch = children(q);
      leaf_lo_[q] = leaf_lo_[ch.front()];
      leaf_hi_[q] = leaf_hi_[ch.back()];
    }
  }
}

CantorTree build_cantor(const CantorSpec& spec) {
  spec.check();
  const int d = spec.dimension;
  const int K = spec.depth;

  CantorTree t;
  t.spec_ = spec;
  t.ell_factor_ =
      spec.length_convention == LengthConvention::Diam ? std::sqrt(double(d)) : 1.0;

  std::mt19937_64 rng(spec.seed);

  t.centers_.assign(spec.root_center.begin(), spec.root_center.end());
  t.centers_.resize(d, 0.0);
  t.side_.push_back(spec.root_side);
  t.gen_.push_back(0);
  t.parent_.push_back(kNoNode);
  t.child_lo_.push_back(0);
  t.child_hi_.push_back(0);

  NodeIdx level_first = 0;
  for (int g = 0; g < K; ++g) {
    const NodeIdx level_last = NodeIdx(t.side_.size());
    for (NodeIdx q = level_first; q < level_last; ++q) {
      ChildPlacement pl = place_children(spec, rng);
      const int n = int(pl.ratios.size());
      const double h = t.side_[q];
      t.child_lo_[q] = t.child_list_.size();
      for (int i = 0; i < n; ++i) {
        const NodeIdx c = NodeIdx(t.side_.size());
        for (int k = 0; k < d; ++k)
          t.centers_.push_back(t.centers_[std::size_t(q) * d + k] +
                               pl.offsets[std::size_t(i) * d + k] * h);
        t.side_.push_back(pl.ratios[i] * h);
        t.gen_.push_back(g + 1);
        t.parent_.push_back(q);
        t.child_lo_.push_back(0);
        t.child_hi_.push_back(0);
        t.child_list_.push_back(c);
      }
      t.child_hi_[q] = t.child_list_.size();
    }
    level_first = level_last;
  }

  t.finalize();
  return t;
}

double CantorTree::cube_dist(NodeIdx a, NodeIdx b) const {
  const int d = dim();
  const double* ca = centers_.data() + std::size_t(a) * d;
  const double* cb = centers_.data() + std::size_t(b) * d;
  const double half = (side_[a] + side_[b]) / 2.0;
  double acc = 0.0;
  for (int k = 0; k < d; ++k) {
    const double gap = std::abs(ca[k] - cb[k]) - half;
    if (gap > 0.0) acc += sq(gap);
  }
  return std::sqrt(acc);
}

double CantorTree::point_dist(std::span<const double> x, NodeIdx q) const {
  const int d = dim();
  const double* c = centers_.data() + std::size_t(q) * d;
  const double half = side_[q] / 2.0;
  double acc = 0.0;
  for (int k = 0; k < d; ++k) {
    const double gap = std::abs(x[k] - c[k]) - half;
    if (gap > 0.0) acc += sq(gap);
  }
  return std::sqrt(acc);
}

int child_count_bound(const CantorSpec& spec) {
  const double m = spec.c_sep * (spec.length_convention == LengthConvention::Diam
                                     ? std::sqrt(double(spec.dimension))
                                     : 1.0);
  return int(std::floor(std::pow((1.0 + m) / (spec.ratio_min + m), spec.dimension)));
}

std::string ValidationIssue::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Ratio:
      os << "child ratio " << value << " outside bounds at cube " << cube;
      break;
    case Kind::Separation:
      os << "siblings " << cube << ", " << other << " at dist " << value
         << " < required " << bound;
      break;
    case Kind::Containment:
      os << "cube " << cube << " escapes its parent by " << value;
      break;
    case Kind::ChildCount:
      os << "cube " << cube << " has " << value << " children, bound " << bound;
      break;
  }
  return os.str();
}

ValidationReport validate_tree(const CantorTree& tree) {
  const auto& spec = tree.spec();
  const int d = tree.dim();
  ValidationReport rep;
  rep.child_count_bound = child_count_bound(spec);
  rep.ratio_lo = std::numeric_limits<double>::infinity();
  rep.ratio_hi = 0.0;
  rep.separation_constant = std::numeric_limits<double>::infinity();
  rep.isolation_constant = std::numeric_limits<double>::infinity();

  const double rtol = 1e-12;
  for (NodeIdx q = 0; q < NodeIdx(tree.node_count()); ++q) {
    auto ch = tree.children(q);
    if (ch.empty()) continue;
    rep.max_children = std::max(rep.max_children, int(ch.size()));
    if (int(ch.size()) > rep.child_count_bound)
      rep.issues.push_back({ValidationIssue::Kind::ChildCount, q, kNoNode,
                            double(ch.size()), double(rep.child_count_bound)});

    for (NodeIdx c : ch) {
      const double r = tree.side(c) / tree.side(q);
      rep.ratio_lo = std::min(rep.ratio_lo, r);
      rep.ratio_hi = std::max(rep.ratio_hi, r);
      if (r < spec.ratio_min * (1 - rtol) || r > spec.ratio_max * (1 + rtol))
        rep.issues.push_back(
            {ValidationIssue::Kind::Ratio, c, kNoNode, r, spec.ratio_min});

      double over = 0.0;
      for (int k = 0; k < d; ++k) {
        const double e = std::abs(tree.center(c)[k] - tree.center(q)[k]) +
                         tree.side(c) / 2.0 - tree.side(q) / 2.0;
        over = std::max(over, e);
      }
      if (over > rtol * tree.side(q))
        rep.issues.push_back(
            {ValidationIssue::Kind::Containment, c, kNoNode, over, 0.0});
    }

    const double need = spec.c_sep * tree.ell(q);
    for (std::size_t i = 0; i < ch.size(); ++i)
      for (std::size_t j = i + 1; j < ch.size(); ++j) {
        const double dist = tree.cube_dist(ch[i], ch[j]);
        rep.separation_constant =
            std::min(rep.separation_constant, dist / tree.ell(q));
        if (dist < need * (1 - rtol))
          rep.issues.push_back(
              {ValidationIssue::Kind::Separation, ch[i], ch[j], dist, need});
      }
  }

  // dist(Q, E \ Q) >= c^{-1} ell(Q): lower-bound the set distance by cube
  // distances to the off-path siblings along the ancestor chain
  for (NodeIdx q = 1; q < NodeIdx(tree.node_count()); ++q) {
    double best = std::numeric_limits<double>::infinity();
    NodeIdx walk = q;
    while (walk != tree.root()) {
      const NodeIdx par = tree.parent(walk);
      for (NodeIdx sib : tree.children(par))
        if (sib != walk) best = std::min(best, tree.cube_dist(q, sib));
      walk = par;
    }
    rep.isolation_constant = std::min(rep.isolation_constant, best / tree.ell(q));
  }

  return rep;
}

CantorTree transform_tree(const CantorTree& tree, double t,
                          std::span<const double> shift) {
  if (!(t > 0.0)) throw NonPositiveScale();
  if (int(shift.size()) != tree.dim())
    throw SpecViolation(SpecViolation::Kind::Parameter, "shift dimension mismatch");

  CantorTree out = tree;
  const int d = tree.dim();
  for (std::size_t i = 0; i < out.centers_.size(); ++i)
    out.centers_[i] = out.centers_[i] * t + shift[i % d];
  for (double& s : out.side_) s *= t;
  out.spec_.root_side *= t;
  out.spec_.root_center.resize(d, 0.0);
  for (int k = 0; k < d; ++k)
    out.spec_.root_center[k] = tree.centers_[k] * t + shift[k];
  return out;
}

}  // namespace cantor
