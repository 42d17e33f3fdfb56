#include "cantor/measure.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cantor {

MassRule MassRule::weighted(std::vector<double> w) {
  MassRule r;
  r.kind = Kind::WeightedSplit;
  r.weights = std::move(w);
  return r;
}

MassRule MassRule::random(double concentration, std::uint64_t seed) {
  MassRule r;
  r.kind = Kind::RandomSplit;
  r.concentration = concentration;
  r.seed = seed;
  return r;
}

MassRule MassRule::prescribed(std::unordered_map<NodeIdx, double> t) {
  MassRule r;
  r.kind = Kind::Prescribed;
  r.table = std::move(t);
  return r;
}

DyadicMeasure::DyadicMeasure(const CantorTree& tree, std::vector<double> mass)
    : tree_(&tree), mass_(std::move(mass)) {}

DyadicMeasure DyadicMeasure::scaled(double lambda) const {
  std::vector<double> m = mass_;
  for (double& v : m) v *= lambda;
  return DyadicMeasure(*tree_, std::move(m));
}

DyadicMeasure assign_measure(const CantorTree& tree, const MassRule& rule) {
  const std::size_t n = tree.node_count();
  std::vector<double> mass(n, 0.0);

  switch (rule.kind) {
    case MassRule::Kind::UniformSplit: {
      mass[0] = rule.total;
      for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
        auto ch = tree.children(q);
        for (NodeIdx c : ch) mass[c] = mass[q] / double(ch.size());
      }
      break;
    }
    case MassRule::Kind::WeightedSplit: {
      mass[0] = rule.total;
      for (double w : rule.weights)
        if (w < 0.0)
          throw MeasureError(MeasureError::Kind::NegativeMass,
                             "negative split weight");
      for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
        auto ch = tree.children(q);
        if (ch.empty()) continue;
        if (rule.weights.size() != ch.size())
          throw MeasureError(MeasureError::Kind::BadRule,
                             "weight count does not match child count");
        double tot = 0.0;
        for (double w : rule.weights) tot += w;
        if (tot <= 0.0)
          throw MeasureError(MeasureError::Kind::NegativeMass,
                             "weights must have positive sum");
        for (std::size_t i = 0; i < ch.size(); ++i) {
          mass[ch[i]] = mass[q] * rule.weights[i] / tot;
          if (mass[ch[i]] <= 0.0)
            throw MeasureError(MeasureError::Kind::NegativeMass,
                               "rule produces a zero-mass cube");
        }
      }
      break;
    }
    case MassRule::Kind::RandomSplit: {
      if (!(rule.concentration > 0.0))
        throw MeasureError(MeasureError::Kind::BadRule,
                           "concentration must be positive");
      mass[0] = rule.total;
      std::mt19937_64 rng(rule.seed);
      std::gamma_distribution<double> gamma(rule.concentration, 1.0);
      std::vector<double> draw;
      for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
        auto ch = tree.children(q);
        if (ch.empty()) continue;
        draw.resize(ch.size());
        double tot = 0.0;
        for (double& g : draw) {
          g = gamma(rng);
          tot += g;
        }
        for (std::size_t i = 0; i < ch.size(); ++i)
          mass[ch[i]] = mass[q] * draw[i] / tot;
      }
      break;
    }
    case MassRule::Kind::Prescribed: {
      for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
        auto it = rule.table.find(q);
        if (it == rule.table.end())
          throw MeasureError(MeasureError::Kind::InconsistentPrescription,
                             "prescribed table misses cube " + std::to_string(q));
        if (it->second <= 0.0)
          throw MeasureError(MeasureError::Kind::NegativeMass,
                             "prescribed mass must be positive");
        mass[q] = it->second;
      }
      for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
        auto ch = tree.children(q);
        if (ch.empty()) continue;
        double sum = 0.0;
        for (NodeIdx c : ch) sum += mass[c];
        if (std::abs(sum - mass[q]) > 1e-10 * mass[0])
          throw MeasureError(MeasureError::Kind::InconsistentPrescription,
                             "children masses do not sum to parent at cube " +
                                 std::to_string(q));
      }
      break;
    }
  }
  return DyadicMeasure(tree, std::move(mass));
}

namespace {

void require_cube(const DyadicMeasure& mu, NodeIdx q) {
  if (q < 0 || std::size_t(q) >= mu.tree().node_count())
    throw MeasureError(MeasureError::Kind::UnknownCube,
                       "cube " + std::to_string(q) + " not in tree");
}

}  // namespace

double theta(const DyadicMeasure& mu, NodeIdx q) {
  require_cube(mu, q);
  return mu.mass(q) / std::pow(mu.tree().ell(q), mu.tree().spec().s);
}

double dyadic_floor(double x) {
  // largest power of two <= x; exact for normal doubles
  return std::ldexp(1.0, std::ilogb(x));
}

double theta_dyadic(const DyadicMeasure& mu, NodeIdx q) {
  const double th = theta(mu, q);
  if (!(th > 0.0))
    throw MeasureError(MeasureError::Kind::ZeroDensity, "Theta(Q) must be positive");
  return dyadic_floor(th);
}

double p_coefficient(const DyadicMeasure& mu, NodeIdx q, std::optional<NodeIdx> r) {
  require_cube(mu, q);
  const CantorTree& t = mu.tree();
  if (r) {
    require_cube(mu, *r);
    if (!t.contains(*r, q))
      throw MeasureError(MeasureError::Kind::NotAnAncestor,
                         "R does not contain Q");
  }
  const double lq = t.ell(q);
  double acc = 0.0;
  NodeIdx p = q;
  while (p != kNoNode) {
    acc += lq / t.ell(p) * theta(mu, p);
    if (r && p == *r) break;
    p = t.parent(p);
  }
  return acc;
}

bool is_p_doubling(const DyadicMeasure& mu, NodeIdx q, double c_db) {
  return p_coefficient(mu, q) <= c_db * theta(mu, q);
}

double sigma(const DyadicMeasure& mu, std::span<const NodeIdx> family) {
  double acc = 0.0;
  for (NodeIdx q : family) {
    const double th = theta(mu, q);
    acc += th * th * mu.mass(q);
  }
  return acc;
}

double q_coefficient(const DyadicMeasure& mu, NodeIdx q,
                     std::span<const NodeIdx> stop_family) {
  require_cube(mu, q);
  const CantorTree& t = mu.tree();
  // cubes of the nested family overlap iff one contains the other
  for (std::size_t i = 0; i < stop_family.size(); ++i)
    for (std::size_t j = i + 1; j < stop_family.size(); ++j)
      if (t.contains(stop_family[i], stop_family[j]) ||
          t.contains(stop_family[j], stop_family[i]))
        throw MeasureError(MeasureError::Kind::OverlappingStopFamily,
                           "stop family cubes overlap");
  const double s = t.spec().s;
  const double lq = t.ell(q);
  double acc = 0.0;
  for (NodeIdx p : stop_family) {
    const double D = t.ell(p) + t.cube_dist(p, q) + lq;
    acc += t.ell(p) * mu.mass(p) / std::pow(D, s + 1.0);
  }
  return acc;
}

CoefficientTable::CoefficientTable(const DyadicMeasure& mu) {
  const CantorTree& t = mu.tree();
  const std::size_t n = t.node_count();
  const double s = t.spec().s;
  theta_.resize(n);
  theta_d_.resize(n);
  p_.resize(n);
  for (NodeIdx q = 0; q < NodeIdx(n); ++q) {
    theta_[q] = mu.mass(q) / std::pow(t.ell(q), s);
    theta_d_[q] = dyadic_floor(theta_[q]);
    sup_theta_ = std::max(sup_theta_, theta_[q]);
    // p(Q) = Theta(Q) + (ell(Q)/ell(parent)) p(parent)
    const NodeIdx par = t.parent(q);
    p_[q] = theta_[q] +
            (par == kNoNode ? 0.0 : t.ell(q) / t.ell(par) * p_[par]);
  }
}

double PointCloud::total_weight() const {
  double acc = 0.0, comp = 0.0;
  for (double w : weights) {
    const double y = w - comp;
    const double t = acc + y;
    comp = (t - acc) - y;
    acc = t;
  }
  return acc;
}

void halton_point(std::uint64_t i, int d, double* out) {
  static const int primes[] = {2, 3, 5, 7, 11, 13};
  for (int k = 0; k < d; ++k) {
    const int b = primes[k % 6];
    double f = 1.0, x = 0.0;
    std::uint64_t n = i + 1;
    while (n > 0) {
      f /= b;
      x += f * double(n % b);
      n /= b;
    }
    out[k] = x;
  }
}

PointCloud discretize(const DyadicMeasure& mu, DiscretizeMode mode,
                      int samples_per_cube, std::span<const NodeIdx> stop_family) {
  const CantorTree& t = mu.tree();
  const int d = t.dim();
  if (samples_per_cube < 1)
    throw MeasureError(MeasureError::Kind::BadRule, "samples_per_cube must be >= 1");

  std::vector<NodeIdx> cubes;
  if (mode == DiscretizeMode::LeafRepresentatives) {
    for (NodeIdx q = t.leaf_begin(); q < NodeIdx(t.node_count()); ++q)
      cubes.push_back(q);
  } else {
    if (stop_family.empty())
      throw MeasureError(MeasureError::Kind::EmptyStopFamily,
                         "eta-samples needs a stop family");
    cubes.assign(stop_family.begin(), stop_family.end());
  }

  PointCloud cloud;
  cloud.dim = d;
  cloud.provenance = mode == DiscretizeMode::LeafRepresentatives
                         ? PointCloud::Provenance::LeafRepresentatives
                         : PointCloud::Provenance::EtaSamples;
  cloud.points.reserve(cubes.size() * samples_per_cube * d);
  cloud.weights.reserve(cubes.size() * samples_per_cube);
  cloud.owner.reserve(cubes.size() * samples_per_cube);

  std::vector<double> u(d);
  for (NodeIdx q : cubes) {
    const double w = mu.mass(q) / samples_per_cube;
    const auto c = t.center(q);
    const double h = t.side(q);
    for (int i = 0; i < samples_per_cube; ++i) {
      if (samples_per_cube == 1) {
        for (int k = 0; k < d; ++k) cloud.points.push_back(c[k]);
      } else {
        halton_point(std::uint64_t(i), d, u.data());
        // keep samples strictly interior, away from the boundary
        for (int k = 0; k < d; ++k)
          cloud.points.push_back(c[k] + h * 0.9 * (u[k] - 0.5));
      }
      cloud.weights.push_back(w);
      cloud.owner.push_back(q);
    }
  }
  return cloud;
}

double ball_mass(const DyadicMeasure& mu, std::span<const double> x, double r) {
  const CantorTree& t = mu.tree();
  const int d = t.dim();
  double acc = 0.0;
  // descend; a cube entirely within distance r contributes in full only at
  // leaf level, where the mass sits at the centroid
  std::vector<NodeIdx> stack{t.root()};
  while (!stack.empty()) {
    const NodeIdx q = stack.back();
    stack.pop_back();
    if (t.point_dist(x, q) > r) continue;
    if (t.is_leaf(q)) {
      double dist2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double dx = x[k] - t.center(q)[k];
        dist2 += dx * dx;
      }
      if (dist2 <= r * r) acc += mu.mass(q);
      continue;
    }
    // quick accept: every leaf centroid below q lies within the cube region
    const double far = t.point_dist(x, q) + t.side(q) * std::sqrt(double(d));
    if (far <= r) {
      acc += mu.mass(q);
      continue;
    }
    for (NodeIdx c : t.children(q)) stack.push_back(c);
  }
  return acc;
}

}  // namespace cantor
