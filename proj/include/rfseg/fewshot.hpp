#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rfseg/sampling.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

template <typename Scalar>
struct Prototype {
  VectorX<Scalar> vec;
  int class_id = kBackgroundLabel;
  std::vector<Index> members;  // row indices into the source pool
  double purity = 0.0;         // fraction of members truly of class_id
};

struct PropagationConfig {
  double alpha = 0.99;
  int k_nn = 10;
  int n_proto = 10;

  void validate() const {
    if (alpha <= 0.0 || alpha >= 1.0)
      throw std::invalid_argument("PropagationConfig: alpha must be in (0,1)");
    if (k_nn < 1) throw std::invalid_argument("PropagationConfig: k_nn must be >= 1");
    if (n_proto < 1) throw std::invalid_argument("PropagationConfig: n_proto must be >= 1");
  }
};

namespace detail {

inline double purity_of(const std::vector<Index>& members, const std::vector<int>& true_labels,
                        int class_id) {
  Index hit = 0;
  for (Index m : members)
    if (true_labels[static_cast<size_t>(m)] == class_id) ++hit;
  return static_cast<double>(hit) / static_cast<double>(members.size());
}

}  // namespace detail

/// Frozen seed/assignment pair, mirroring the CCNS component plan; lets the
/// gradient-check oracle hold the prototype partition constant.
struct ComponentSeedPlan {
  std::vector<Index> seeds;
  std::vector<int> assignment;
};

/// FPS multi-prototypes of one class pool: min(n_proto, rows) seeds in
/// feature space, nearest-seed components, one mean vector per component.
/// `true_labels` carries the hidden per-point class used only for the
/// purity bookkeeping.
template <typename Scalar>
std::vector<Prototype<Scalar>> multi_prototype_generation(const MatrixX<Scalar>& features,
                                                          const std::vector<int>& true_labels,
                                                          int class_id, int n_proto,
                                                          const ComponentSeedPlan* frozen = nullptr) {
  const Index n = features.rows();
  if (n == 0) throw std::invalid_argument("multi_prototype_generation: empty class pool");
  if (static_cast<Index>(true_labels.size()) != n)
    throw std::invalid_argument("multi_prototype_generation: label count mismatch");
  if (n_proto < 1) throw std::invalid_argument("multi_prototype_generation: n_proto must be >= 1");

  std::vector<Index> seeds;
  std::vector<int> assignment;
  if (frozen) {
    seeds = frozen->seeds;
    assignment = frozen->assignment;
  } else {
    seeds = farthest_point_sampling(features, std::min<Index>(n_proto, n));
    assignment = assign_to_seeds(features, seeds);
  }

  std::vector<Prototype<Scalar>> prototypes(seeds.size());
  for (size_t c = 0; c < seeds.size(); ++c) prototypes[c].class_id = class_id;
  for (Index i = 0; i < n; ++i)
    prototypes[static_cast<size_t>(assignment[static_cast<size_t>(i)])].members.push_back(i);

  std::vector<Prototype<Scalar>> out;
  for (auto& p : prototypes) {
    if (p.members.empty()) continue;  // possible only with frozen plans
    p.vec = VectorX<Scalar>::Zero(features.cols());
    for (Index m : p.members) p.vec += features.row(m).transpose();
    p.vec /= static_cast<Scalar>(p.members.size());
    p.purity = detail::purity_of(p.members, true_labels, class_id);
    out.push_back(std::move(p));
  }
  return out;
}

/// ProtoNet-style single mean prototype; its purity is exactly the clean
/// point fraction of the pool.
template <typename Scalar>
Prototype<Scalar> global_prototype(const MatrixX<Scalar>& features,
                                   const std::vector<int>& true_labels, int class_id) {
  const Index n = features.rows();
  if (n == 0) throw std::invalid_argument("global_prototype: empty class pool");
  Prototype<Scalar> p;
  p.class_id = class_id;
  p.vec = features.colwise().mean().transpose();
  p.members.resize(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) p.members[static_cast<size_t>(i)] = i;
  p.purity = detail::purity_of(p.members, true_labels, class_id);
  return p;
}

/// Gaussian affinity over the union of directed k-NN edges, symmetrized by
/// max, zero diagonal. sigma2 < 0 self-tunes to the mean squared distance
/// to the k-th neighbor (guarded to 1 when that collapses to zero).
template <typename Scalar>
MatrixX<Scalar> build_knn_graph(const MatrixX<Scalar>& nodes, int k_nn,
                                Scalar sigma2 = Scalar(-1)) {
  const Index n = nodes.rows();
  if (n < 2) throw std::invalid_argument("build_knn_graph: need at least two nodes");
  const int k = std::min<int>(k_nn, static_cast<int>(n - 1));
  if (k < 1) throw std::invalid_argument("build_knn_graph: k_nn must be >= 1");

  // Pairwise squared distances.
  const VectorX<Scalar> sq = nodes.rowwise().squaredNorm();
  MatrixX<Scalar> d2 = (-2 * (nodes * nodes.transpose())).colwise() + sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(Scalar(0));
  d2.diagonal().setZero();

  // k-th neighbor distance per node (self excluded).
  std::vector<Scalar> kth(static_cast<size_t>(n));
  std::vector<std::vector<Index>> neigh(static_cast<size_t>(n));
  std::vector<std::pair<Scalar, Index>> order(static_cast<size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    size_t w = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) order[w++] = {d2(i, j), j};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int t = 0; t < k; ++t) neigh[static_cast<size_t>(i)].push_back(order[static_cast<size_t>(t)].second);
    kth[static_cast<size_t>(i)] = order[static_cast<size_t>(k - 1)].first;
  }

  if (sigma2 < Scalar(0)) {
    Scalar acc = 0;
    for (Scalar v : kth) acc += v;
    sigma2 = acc / static_cast<Scalar>(n);
  }
  if (sigma2 <= Scalar(0)) sigma2 = Scalar(1);

  MatrixX<Scalar> a = MatrixX<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j : neigh[static_cast<size_t>(i)]) {
      const Scalar w = std::exp(-d2(i, j) / (Scalar(2) * sigma2));
      a(i, j) = std::max(a(i, j), w);
      a(j, i) = std::max(a(j, i), w);
    }
  a.diagonal().setZero();
  return a;
}

/// Transductive propagation: F = (I - alpha * S)^-1 Y with the
/// symmetrically normalized affinity S = D^-1/2 A D^-1/2 (zero-degree rows
/// stay zero). Solved directly via Cholesky; I - alpha*S is SPD for
/// alpha < 1.
template <typename Scalar>
MatrixX<Scalar> label_propagate(const MatrixX<Scalar>& affinity, const MatrixX<Scalar>& seed_labels,
                                Scalar alpha) {
  const Index n = affinity.rows();
  if (affinity.cols() != n || seed_labels.rows() != n)
    throw std::invalid_argument("label_propagate: shape mismatch");
  if (alpha >= Scalar(1) || alpha < Scalar(0))
    throw std::invalid_argument("label_propagate: alpha must be in [0,1)");

  const VectorX<Scalar> deg = affinity.rowwise().sum();
  VectorX<Scalar> dinv = deg;
  for (Index i = 0; i < n; ++i) dinv(i) = deg(i) > Scalar(0) ? Scalar(1) / std::sqrt(deg(i)) : Scalar(0);

  MatrixX<Scalar> system = -alpha * (dinv.asDiagonal() * affinity * dinv.asDiagonal());
  system.diagonal().array() += Scalar(1);
  Eigen::LLT<MatrixX<Scalar>> llt(system);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("label_propagate: singular system");
  return llt.solve(seed_labels);
}

/// Fixed-point route for the same solution: F <- alpha * S * F + Y until
/// the infinity norm of the update drops below tol.
template <typename Scalar>
MatrixX<Scalar> label_propagate_iterative(const MatrixX<Scalar>& affinity,
                                          const MatrixX<Scalar>& seed_labels, Scalar alpha,
                                          Scalar tol = Scalar(1e-12), long max_iters = 1000000) {
  const Index n = affinity.rows();
  if (affinity.cols() != n || seed_labels.rows() != n)
    throw std::invalid_argument("label_propagate_iterative: shape mismatch");
  if (alpha >= Scalar(1) || alpha < Scalar(0))
    throw std::invalid_argument("label_propagate_iterative: alpha must be in [0,1)");

  const VectorX<Scalar> deg = affinity.rowwise().sum();
  VectorX<Scalar> dinv = deg;
  for (Index i = 0; i < n; ++i) dinv(i) = deg(i) > Scalar(0) ? Scalar(1) / std::sqrt(deg(i)) : Scalar(0);
  const MatrixX<Scalar> s = dinv.asDiagonal() * affinity * dinv.asDiagonal();

  MatrixX<Scalar> f = seed_labels;
  for (long it = 0; it < max_iters; ++it) {
    MatrixX<Scalar> next = alpha * (s * f) + seed_labels;
    const Scalar delta = (next - f).template lpNorm<Eigen::Infinity>();
    f.swap(next);
    if (delta < tol) break;
  }
  return f;
}

/// Argmax over class columns per node row; any tie (including all-zero
/// rows) falls back to background.
template <typename Scalar>
Eigen::VectorXi predict_labels(const MatrixX<Scalar>& scores) {
  Eigen::VectorXi labels(scores.rows());
  for (Index i = 0; i < scores.rows(); ++i) {
    const Scalar best = scores.row(i).maxCoeff();
    int arg = -1;
    int hits = 0;
    for (Index c = 0; c < scores.cols(); ++c)
      if (scores(i, c) == best) {
        ++hits;
        if (arg < 0) arg = static_cast<int>(c);
      }
    labels(i) = hits > 1 ? kBackgroundLabel : arg;
  }
  return labels;
}

/// Labels for the query block of a propagated score matrix.
template <typename Scalar>
Eigen::VectorXi predict_query(const MatrixX<Scalar>& scores, Index query_begin) {
  if (query_begin < 0 || query_begin > scores.rows())
    throw std::invalid_argument("predict_query: bad query offset");
  return predict_labels<Scalar>(scores.bottomRows(scores.rows() - query_begin));
}

/// Nearest-prototype classification; equidistant prototypes resolve to the
/// lower class id.
template <typename Scalar>
Eigen::VectorXi protonet_predict(const std::vector<Prototype<Scalar>>& prototypes,
                                 const MatrixX<Scalar>& queries) {
  if (prototypes.empty()) throw std::invalid_argument("protonet_predict: no prototypes");
  Eigen::VectorXi labels(queries.rows());
  for (Index i = 0; i < queries.rows(); ++i) {
    Scalar best = std::numeric_limits<Scalar>::max();
    int arg = prototypes[0].class_id;
    for (const auto& p : prototypes) {
      const Scalar d = (queries.row(i).transpose() - p.vec).squaredNorm();
      if (d < best || (d == best && p.class_id < arg)) {
        best = d;
        arg = p.class_id;
      }
    }
    labels(i) = arg;
  }
  return labels;
}

}  // namespace rfseg
