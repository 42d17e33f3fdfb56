#include "cantor/riesz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cantor/detail/parallel.hpp"

namespace cantor {

namespace {

// r2^((s+1)/2) with sqrt chains when the exponent is a quarter integer
struct KernelPow {
  double e = 1.25;
  int whole = 1;
  int quarter = 1;
  bool fast = true;

  explicit KernelPow(double s) {
    e = (s + 1.0) / 2.0;
    const double k4 = 4.0 * e;
    const double k = std::round(k4);
    fast = std::abs(k4 - k) < 1e-12 && k > 0 && k < 64;
    whole = int(k) / 4;
    quarter = int(k) % 4;
  }

  double operator()(double r2) const {
    if (!fast) return std::pow(r2, e);
    double ip = 1.0;
    for (int i = 0; i < whole; ++i) ip *= r2;
    if (quarter == 0) return ip;
    const double q = std::sqrt(std::sqrt(r2));
    if (quarter == 1) return ip * q;
    if (quarter == 2) return ip * q * q;
    return ip * q * q * q;
  }
};

struct Kahan {
  double sum = 0.0, comp = 0.0;
  void add(double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

}  // namespace

void kernel_eval(std::span<const double> x, std::span<const double> y,
                 const KernelParams& params, std::span<double> out) {
  const int d = int(x.size());
  double r2 = 0.0;
  for (int k = 0; k < d; ++k) {
    const double dx = x[k] - y[k];
    r2 += dx * dx;
  }
  double reg = 0.0;
  if (params.suppression) reg = params.suppression(x) * params.suppression(y);
  if (r2 + reg <= 0.0)
    throw RieszError(RieszError::Kind::SingularEvaluation,
                     "kernel evaluated at coincident points without suppression");
  const KernelPow pw(params.s);
  const double denom = pw(r2 + reg);
  for (int k = 0; k < d; ++k) out[k] = (x[k] - y[k]) / denom;
}

namespace {

// direct sum at one point, cloud order, compensated per component
void direct_point(const PointCloud& cloud, const double* x,
                  const KernelParams& params, const KernelPow& pw,
                  NodeIdx excluded, double* out) {
  const int d = cloud.dim;
  const double eps2 = params.epsilon * params.epsilon;
  const bool suppressed = bool(params.suppression);
  double phix = 0.0;
  if (suppressed) phix = params.suppression({x, std::size_t(d)});

  Kahan acc[3];
  const std::size_t n = cloud.size();
  const double* pts = cloud.points.data();
  for (std::size_t j = 0; j < n; ++j) {
    if (excluded != kNoNode && cloud.owner[j] == excluded) continue;
    const double* y = pts + j * d;
    double r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      const double dx = x[k] - y[k];
      r2 += dx * dx;
    }
    double reg = 0.0;
    if (suppressed) {
      reg = phix * params.suppression({y, std::size_t(d)});
    } else if (r2 <= eps2) {
      continue;  // truncation |x-y| > epsilon
    }
    if (r2 + reg <= 0.0) continue;  // coincident with zero suppression
    const double inv = cloud.weights[j] / pw(r2 + reg);
    for (int k = 0; k < d; ++k) acc[k].add((x[k] - y[k]) * inv);
  }
  for (int k = 0; k < d; ++k) out[k] = acc[k].sum;
}

}  // namespace

TreecodeIndex::TreecodeIndex(const CantorTree& tree, const PointCloud& cloud,
                             const TreecodeOptions& opts)
    : tree_(&tree), opts_(opts), dim_(cloud.dim) {
  const std::size_t np = cloud.size();
  const std::size_t nn = tree.node_count();

  // bucket points by owner, then emit in DFS order: own points first, then
  // the children blocks, so every node's points form one contiguous range
  std::vector<std::vector<std::int64_t>> bucket(nn);
  for (std::size_t j = 0; j < np; ++j) bucket[cloud.owner[j]].push_back(j);

  pts_.resize(np * dim_);
  wts_.resize(np);
  owner_.resize(np);
  lo_.assign(nn, 0);
  hi_.assign(nn, 0);

  std::int64_t cursor = 0;
  std::vector<std::pair<NodeIdx, bool>> stack{{tree.root(), false}};
  while (!stack.empty()) {
    auto [q, done] = stack.back();
    stack.pop_back();
    if (done) {
      auto ch = tree.children(q);
      hi_[q] = ch.empty() ? cursor : hi_[ch.back()];
      continue;
    }
    lo_[q] = cursor;
    for (std::int64_t j : bucket[q]) {
      for (int k = 0; k < dim_; ++k)
        pts_[std::size_t(cursor) * dim_ + k] = cloud.points[std::size_t(j) * dim_ + k];
      wts_[cursor] = cloud.weights[j];
      owner_[cursor] = cloud.owner[j];
      ++cursor;
    }
    stack.push_back({q, true});
    auto ch = tree.children(q);
    for (auto it = ch.rbegin(); it != ch.rend(); ++it)
      stack.push_back({*it, false});
  }
  // fix up hi for nodes without children encountered above
  for (NodeIdx q = NodeIdx(nn) - 1; q >= 0; --q) {
    auto ch = tree.children(q);
    if (ch.empty()) {
      hi_[q] = lo_[q] + std::int64_t(bucket[q].size());
    } else {
      hi_[q] = std::max(hi_[ch.back()], lo_[q] + std::int64_t(bucket[q].size()));
    }
  }

  build_expansions();
}

void TreecodeIndex::cheb_nodes(NodeIdx q, std::vector<double>& out) const {
  const int n = opts_.cheb_order;
  const int d = dim_;
  const auto c = tree_->center(q);
  const double h = tree_->side(q);
  out.resize(std::size_t(block_) * d);
  // 1D Chebyshev (first kind) abscissas per dimension, tensorized
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i)
    t[i] = std::cos(std::numbers::pi * (2.0 * i + 1.0) / (2.0 * n));
  for (std::int64_t f = 0; f < block_; ++f) {
    std::int64_t rest = f;
    for (int k = 0; k < d; ++k) {
      out[std::size_t(f) * d + k] = c[k] + 0.5 * h * t[rest % n];
      rest /= n;
    }
  }
}

namespace {

// 1D barycentric Lagrange values at x for Chebyshev-1 nodes on [c-h/2, c+h/2]
void lagrange_1d(double x, double c, double h, int n, double* out) {
  thread_local std::vector<double> tnodes, lam;
  if (int(tnodes.size()) != n) {
    tnodes.resize(n);
    lam.resize(n);
    for (int i = 0; i < n; ++i) {
      const double a = std::numbers::pi * (2.0 * i + 1.0) / (2.0 * n);
      tnodes[i] = std::cos(a);
      lam[i] = (i % 2 ? -1.0 : 1.0) * std::sin(a);
    }
  }
  const double u = (x - c) / (0.5 * h);  // reference coordinate
  double denom = 0.0;
  for (int i = 0; i < n; ++i) {
    const double diff = u - tnodes[i];
    if (diff == 0.0) {
      for (int j = 0; j < n; ++j) out[j] = (j == i) ? 1.0 : 0.0;
      return;
    }
    out[i] = lam[i] / diff;
    denom += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= denom;
}

}  // namespace

void TreecodeIndex::build_expansions() {
  const int n = opts_.cheb_order;
  const int d = dim_;
  block_ = 1;
  for (int k = 0; k < d; ++k) block_ *= n;

  const std::size_t nn = tree_->node_count();
  exp_off_.assign(nn, -1);

  // deepest nodes first; children in BFS storage always have larger indices
  std::vector<double> l1d(std::size_t(n) * d);
  std::vector<double> child_nodes;
  for (NodeIdx q = NodeIdx(nn) - 1; q >= 0; --q) {
    if (hi_[q] - lo_[q] < opts_.min_points) continue;
    exp_off_[q] = std::int64_t(exp_w_.size());
    exp_w_.resize(exp_w_.size() + std::size_t(block_), 0.0);
    double* w = exp_w_.data() + exp_off_[q];
    const auto c = tree_->center(q);
    const double h = tree_->side(q);

    auto anterpolate = [&](const double* z, double weight) {
      for (int k = 0; k < d; ++k)
        lagrange_1d(z[k], c[k], h, n, l1d.data() + std::size_t(k) * n);
      for (std::int64_t f = 0; f < block_; ++f) {
        std::int64_t rest = f;
        double prod = weight;
        for (int k = 0; k < d; ++k) {
          prod *= l1d[std::size_t(k) * n + rest % n];
          rest /= n;
        }
        w[f] += prod;
      }
    };

    // points owned directly by q
    auto ch = tree_->children(q);
    const std::int64_t own_hi = ch.empty() ? hi_[q] : lo_[ch.front()];
    for (std::int64_t j = lo_[q]; j < own_hi; ++j)
      anterpolate(pts_.data() + std::size_t(j) * d, wts_[j]);

    for (NodeIdx cidx : ch) {
      if (hi_[cidx] == lo_[cidx]) continue;
      if (exp_off_[cidx] >= 0) {
        cheb_nodes(cidx, child_nodes);
        const double* cw = exp_w_.data() + exp_off_[cidx];
        for (std::int64_t f = 0; f < block_; ++f)
          anterpolate(child_nodes.data() + std::size_t(f) * d, cw[f]);
      } else {
        for (std::int64_t j = lo_[cidx]; j < hi_[cidx]; ++j)
          anterpolate(pts_.data() + std::size_t(j) * d, wts_[j]);
      }
    }
  }
}

void TreecodeIndex::eval(std::span<const double> x, const KernelParams& params,
                         NodeIdx excluded, std::span<double> out) const {
  const int d = dim_;
  const KernelPow pw(params.s);
  const double eps = params.epsilon;
  const double eps2 = eps * eps;
  const double sqd = std::sqrt(double(d));

  Kahan acc[3];
  thread_local std::vector<double> nodes;
  thread_local std::vector<NodeIdx> stack;
  stack.clear();
  stack.push_back(tree_->root());

  auto direct_range = [&](std::int64_t lo, std::int64_t hi, bool checked) {
    for (std::int64_t j = lo; j < hi; ++j) {
      if (checked && excluded != kNoNode && owner_[j] == excluded) continue;
      const double* y = pts_.data() + std::size_t(j) * d;
      double r2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double dx = x[k] - y[k];
        r2 += dx * dx;
      }
      if (checked && r2 <= eps2) continue;
      if (r2 <= 0.0) continue;
      const double inv = wts_[j] / pw(r2);
      for (int k = 0; k < d; ++k) acc[k].add((x[k] - y[k]) * inv);
    }
  };

  while (!stack.empty()) {
    const NodeIdx q = stack.back();
    stack.pop_back();
    if (hi_[q] == lo_[q]) continue;

    const auto c = tree_->center(q);
    double dist2 = 0.0;
    for (int k = 0; k < d; ++k) {
      const double dx = x[k] - c[k];
      dist2 += dx * dx;
    }
    const double diam = tree_->side(q) * sqd;
    const bool excluded_inside =
        excluded != kNoNode && tree_->contains(q, excluded);
    const bool far = diam * diam < opts_.theta_open * opts_.theta_open * dist2 &&
                     tree_->point_dist(x, q) > eps && !excluded_inside;

    if (far) {
      if (exp_off_[q] >= 0) {
        cheb_nodes(q, nodes);
        const double* w = exp_w_.data() + exp_off_[q];
        const std::int64_t b = block_;
        for (std::int64_t f = 0; f < b; ++f) {
          const double* t = nodes.data() + std::size_t(f) * d;
          double r2 = 0.0;
          for (int k = 0; k < d; ++k) {
            const double dx = x[k] - t[k];
            r2 += dx * dx;
          }
          const double inv = w[f] / pw(r2);
          for (int k = 0; k < d; ++k) acc[k].add((x[k] - t[k]) * inv);
        }
      } else {
        direct_range(lo_[q], hi_[q], false);
      }
      continue;
    }

    auto ch = tree_->children(q);
    if (ch.empty()) {
      direct_range(lo_[q], hi_[q], true);
      continue;
    }
    // own points of an internal node (eta clouds), then descend
    direct_range(lo_[q], lo_[ch.front()], true);
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }

  for (int k = 0; k < d; ++k) out[k] = acc[k].sum;
}

RieszField riesz_field(const PointCloud& cloud, std::span<const double> eval_points,
                       const KernelParams& params, FieldMode mode,
                       const TreecodeOptions& opts, int threads,
                       const CantorTree* tree, std::span<const NodeIdx> excluded) {
  if (cloud.size() == 0)
    throw RieszError(RieszError::Kind::EmptyCloud, "empty point cloud");
  const int d = cloud.dim;
  const std::size_t ne = eval_points.size() / d;
  if (!excluded.empty() && excluded.size() != ne)
    throw RieszError(RieszError::Kind::BadMode,
                     "excluded list must match evaluation points");

  RieszField field;
  field.dim = d;
  field.mode = mode;
  field.epsilon = params.epsilon;
  field.values.assign(ne * d, 0.0);

  if (mode == FieldMode::Direct) {
    const KernelPow pw(params.s);
    detail::parallel_for(ne, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i)
        direct_point(cloud, eval_points.data() + i * d, params, pw,
                     excluded.empty() ? kNoNode : excluded[i],
                     field.values.data() + i * d);
    });
    return field;
  }

  if (!(opts.theta_open > 0.0 && opts.theta_open < 1.0))
    throw RieszError(RieszError::Kind::InvalidOpening,
                     "theta_open must lie in (0,1)");
  if (params.suppression)
    throw RieszError(RieszError::Kind::BadMode,
                     "suppressed kernel is direct-mode only");
  if (!tree)
    throw RieszError(RieszError::Kind::BadMode,
                     "treecode mode needs the cantor tree");
  field.theta_open = opts.theta_open;

  TreecodeIndex index(*tree, cloud, opts);
  detail::parallel_for(ne, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      index.eval({eval_points.data() + i * d, std::size_t(d)}, params,
                 excluded.empty() ? kNoNode : excluded[i],
                 {field.values.data() + i * d, std::size_t(d)});
  });
  return field;
}

LeafFieldTable::LeafFieldTable(const CantorTree& tree, const DyadicMeasure& mu,
                               const KernelParams& params, FieldMode mode,
                               const TreecodeOptions& opts, int threads)
    : dim_(tree.dim()) {
  const PointCloud cloud = discretize(mu, DiscretizeMode::LeafRepresentatives, 1);
  const std::size_t L = cloud.size();
  std::vector<NodeIdx> excl(L);
  for (std::size_t i = 0; i < L; ++i) excl[i] = cloud.owner[i];

  RieszField f = riesz_field(cloud, cloud.points, params, mode, opts, threads,
                             &tree, excl);
  leaf_ = std::move(f.values);

  // mass-weighted means up the tree
  const std::size_t n = tree.node_count();
  mean_.assign(n * dim_, 0.0);
  const NodeIdx lb = tree.leaf_begin();
  for (NodeIdx q = NodeIdx(n) - 1; q >= 0; --q) {
    double* m = mean_.data() + std::size_t(q) * dim_;
    if (tree.is_leaf(q)) {
      const double* v = leaf_.data() + std::size_t(q - lb) * dim_;
      for (int k = 0; k < dim_; ++k) m[k] = mu.mass(q) * v[k];
    } else {
      for (NodeIdx c : tree.children(q)) {
        const double* mc = mean_.data() + std::size_t(c) * dim_;
        for (int k = 0; k < dim_; ++k) m[k] += mc[k];
      }
    }
  }
  for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
    double* m = mean_.data() + std::size_t(q) * dim_;
    for (int k = 0; k < dim_; ++k) m[k] /= mu.mass(q);
  }
}

double LeafFieldTable::mean_norm(NodeIdx q) const {
  const double* m = mean_.data() + std::size_t(q) * dim_;
  double acc = 0.0;
  for (int k = 0; k < dim_; ++k) acc += m[k] * m[k];
  return std::sqrt(acc);
}

double riesz_energy(const CantorTree& tree, const DyadicMeasure& mu,
                    const KernelParams& params, int quadrature_order,
                    FieldMode mode, const TreecodeOptions& opts, int threads) {
  if (tree.depth() < 1)
    throw RieszError(RieszError::Kind::DepthZero,
                     "energy needs depth >= 1 (no complement exists)");

  if (quadrature_order <= 1) {
    LeafFieldTable table(tree, mu, params, mode, opts, threads);
    const NodeIdx lb = tree.leaf_begin();
    Kahan e;
    for (NodeIdx q = lb; q < NodeIdx(tree.node_count()); ++q) {
      const auto v = table.leaf_field(q - lb);
      double n2 = 0.0;
      for (double c : v) n2 += c * c;
      e.add(mu.mass(q) * n2);
    }
    return e.sum;
  }

  const int d = tree.dim();
  const PointCloud cloud = discretize(mu, DiscretizeMode::LeafRepresentatives, 1);
  const NodeIdx lb = tree.leaf_begin();
  const std::size_t L = tree.leaf_count();
  std::vector<double> evals;
  std::vector<NodeIdx> excl;
  evals.reserve(L * quadrature_order * d);
  excl.reserve(L * quadrature_order);
  std::vector<double> u(d);
  for (NodeIdx q = lb; q < NodeIdx(tree.node_count()); ++q) {
    const auto c = tree.center(q);
    const double h = tree.side(q);
    for (int i = 0; i < quadrature_order; ++i) {
      halton_point(std::uint64_t(i), d, u.data());
      for (int k = 0; k < d; ++k)
        evals.push_back(c[k] + h * 0.9 * (u[k] - 0.5));
      excl.push_back(q);
    }
  }
  RieszField f =
      riesz_field(cloud, evals, params, mode, opts, threads, &tree, excl);
  Kahan e;
  for (std::size_t leaf = 0; leaf < L; ++leaf) {
    double m2 = 0.0;
    for (int i = 0; i < quadrature_order; ++i) {
      const auto v = f.value(leaf * quadrature_order + i);
      for (double c : v) m2 += c * c;
    }
    e.add(mu.mass(NodeIdx(lb + leaf)) * m2 / quadrature_order);
  }
  return e.sum;
}

std::vector<double> riesz_mean(const CantorTree& tree, const DyadicMeasure& mu,
                               NodeIdx q, const KernelParams& params,
                               FieldMode mode, const TreecodeOptions& opts,
                               int threads) {
  if (q < 0 || std::size_t(q) >= tree.node_count())
    throw RieszError(RieszError::Kind::UnknownCube, "cube not in tree");
  LeafFieldTable table(tree, mu, params, mode, opts, threads);
  const auto m = table.mean(q);
  return {m.begin(), m.end()};
}

MartingaleDecomposition martingale_decompose(const CantorTree& tree,
                                             const DyadicMeasure& mu,
                                             std::span<const double> leaf_values,
                                             int ncomp) {
  const std::size_t L = tree.leaf_count();
  if (leaf_values.size() != L * std::size_t(ncomp))
    throw RieszError(RieszError::Kind::MissingLeafValue,
                     "expected one value (x ncomp) per leaf");

  const std::size_t n = tree.node_count();
  const NodeIdx lb = tree.leaf_begin();
  MartingaleDecomposition dec;
  dec.ncomp = ncomp;
  dec.cube_mean.assign(n * ncomp, 0.0);
  dec.block_norm2.assign(n, 0.0);

  for (NodeIdx q = NodeIdx(n) - 1; q >= 0; --q) {
    double* m = dec.cube_mean.data() + std::size_t(q) * ncomp;
    if (tree.is_leaf(q)) {
      const double* v = leaf_values.data() + std::size_t(q - lb) * ncomp;
      for (int k = 0; k < ncomp; ++k) m[k] = mu.mass(q) * v[k];
    } else {
      for (NodeIdx c : tree.children(q)) {
        const double* mc = dec.cube_mean.data() + std::size_t(c) * ncomp;
        for (int k = 0; k < ncomp; ++k) m[k] += mc[k];
      }
    }
  }
  for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
    double* m = dec.cube_mean.data() + std::size_t(q) * ncomp;
    for (int k = 0; k < ncomp; ++k) m[k] /= mu.mass(q);
  }

  // ||D_Q f||^2 = sum over children P of mu(P) |m_P f - m_Q f|^2
  Kahan blocks;
  for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
    if (tree.is_leaf(q)) continue;
    const double* mq = dec.cube_mean.data() + std::size_t(q) * ncomp;
    double b = 0.0;
    for (NodeIdx c : tree.children(q)) {
      const double* mc = dec.cube_mean.data() + std::size_t(c) * ncomp;
      double diff2 = 0.0;
      for (int k = 0; k < ncomp; ++k) {
        const double dd = mc[k] - mq[k];
        diff2 += dd * dd;
      }
      b += mu.mass(c) * diff2;
    }
    dec.block_norm2[q] = b;
    blocks.add(b);
  }
  dec.sum_blocks = blocks.sum;

  Kahan fn;
  for (NodeIdx q = lb; q < NodeIdx(n); ++q) {
    const double* v = leaf_values.data() + std::size_t(q - lb) * ncomp;
    double n2 = 0.0;
    for (int k = 0; k < ncomp; ++k) n2 += v[k] * v[k];
    fn.add(mu.mass(q) * n2);
  }
  dec.f_norm2 = fn.sum;

  dec.coarse_mean.assign(dec.cube_mean.begin(), dec.cube_mean.begin() + ncomp);
  double cm2 = 0.0;
  for (double c : dec.coarse_mean) cm2 += c * c;
  dec.mean_term = mu.total() * cm2;
  return dec;
}

}  // namespace cantor
