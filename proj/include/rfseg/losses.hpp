#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rfseg/geometry.hpp"
#include "rfseg/network.hpp"
#include "rfseg/sampling.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

template <typename Scalar>
struct LossConfig {
  Scalar tau = Scalar(0.1);
  Scalar lambda = Scalar(0.1);
  int components = 4;  // R

  void validate() const {
    if (tau <= Scalar(0)) throw std::invalid_argument("LossConfig: tau must be > 0");
    if (lambda < Scalar(0)) throw std::invalid_argument("LossConfig: lambda must be >= 0");
    if (components < 1) throw std::invalid_argument("LossConfig: R must be >= 1");
  }
};

/// Mean over rows of -log softmax(logits)[label].
/// `d_logits`, when non-null, receives (softmax - onehot)/rows.
template <typename Scalar>
Scalar cross_entropy(const MatrixX<Scalar>& logits, const Eigen::VectorXi& labels,
                     MatrixX<Scalar>* d_logits = nullptr) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  if (!logits.allFinite()) throw std::invalid_argument("cross_entropy: non-finite logits");

  if (d_logits) d_logits->setZero(n, c);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    if (labels(i) < 0 || labels(i) >= c)
      throw std::invalid_argument("cross_entropy: label out of range");
    const Scalar mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorX<Scalar> e = (logits.row(i).array() - mx).exp();
    const Scalar denom = e.sum();
    loss += -(logits(i, labels(i)) - mx) + std::log(denom);
    if (d_logits) {
      d_logits->row(i) = e / (denom * Scalar(n));
      (*d_logits)(i, labels(i)) -= Scalar(1) / Scalar(n);
    }
  }
  return loss / Scalar(n);
}

/// Supervised contrastive objective over unit row vectors: every row is an
/// anchor with weight 1/n, positives are the other rows with the same
/// label, the denominator runs over all rows except the anchor. Anchors
/// without positives contribute zero. Returns the loss; `d_rows`, when
/// non-null, receives the gradient w.r.t. the rows.
template <typename Scalar>
Scalar supervised_contrastive(const MatrixX<Scalar>& z, const std::vector<int>& labels,
                              Scalar tau, MatrixX<Scalar>* d_rows = nullptr) {
  const Index n = z.rows();
  if (static_cast<Index>(labels.size()) != n)
    throw std::invalid_argument("supervised_contrastive: label count mismatch");
  if (tau <= Scalar(0)) throw std::invalid_argument("supervised_contrastive: tau must be > 0");

  const MatrixX<Scalar> sim = z * z.transpose();
  MatrixX<Scalar> g;  // d loss / d sim(k,h), anchor k rows
  if (d_rows) g.setZero(n, n);

  Scalar loss = 0;
  for (Index k = 0; k < n; ++k) {
    std::vector<Index> pos;
    for (Index h = 0; h < n; ++h)
      if (h != k && labels[static_cast<size_t>(h)] == labels[static_cast<size_t>(k)])
        pos.push_back(h);
    if (pos.empty()) continue;

    // log-sum-exp over all non-anchor rows, max-shifted
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index h = 0; h < n; ++h)
      if (h != k) mx = std::max(mx, sim(k, h) / tau);
    Scalar denom = 0;
    for (Index h = 0; h < n; ++h)
      if (h != k) denom += std::exp(sim(k, h) / tau - mx);
    const Scalar lse = mx + std::log(denom);

    Scalar pos_sum = 0;
    for (Index p : pos) pos_sum += sim(k, p) / tau;
    const Scalar a = static_cast<Scalar>(pos.size());
    loss += -pos_sum / a + lse;

    if (d_rows) {
      for (Index h = 0; h < n; ++h) {
        if (h == k) continue;
        const Scalar p_kh = std::exp(sim(k, h) / tau - mx) / denom;
        g(k, h) += p_kh / (tau * Scalar(n));
      }
      for (Index p : pos) g(k, p) -= Scalar(1) / (tau * a * Scalar(n));
    }
  }
  loss /= Scalar(n);

  if (d_rows) *d_rows = (g + g.transpose()) * z;
  return loss;
}

/// Shot-level clean-noise separation: contrastive over the K shot vectors
/// of one way, labelled by their true classes.
template <typename Scalar>
Scalar cns_loss(const MatrixX<Scalar>& shot_vectors, const std::vector<int>& true_classes,
                Scalar tau, MatrixX<Scalar>* d_vectors = nullptr) {
  if (shot_vectors.rows() < 2)
    throw std::invalid_argument("cns_loss: contrast undefined for K < 2");
  return supervised_contrastive(shot_vectors, true_classes, tau, d_vectors);
}

/// Frozen component structure of one way: FPS seeds and the nearest-seed
/// assignment per shot. The gradient treats this partition as constant;
/// reusing a plan makes the loss a smooth function of the features, which
/// the finite-difference oracle relies on.
struct ComponentPlan {
  std::vector<std::vector<Index>> seeds;     // per shot
  std::vector<std::vector<int>> assignment;  // per shot, component id per row
};

namespace detail {

template <typename Scalar>
VectorX<Scalar> normalize_guarded(const VectorX<Scalar>& y) {
  const Scalar norm = y.norm();
  if (norm < Scalar(kNormGuard)) {
    VectorX<Scalar> e = VectorX<Scalar>::Zero(y.size());
    e(0) = Scalar(1);
    return e;
  }
  return y / norm;
}

}  // namespace detail

/// Component-level clean-noise separation over one way. Each shot's
/// foreground projection rows are decomposed into R' = min(R, rows)
/// components (FPS seeds + nearest-seed assignment in feature space); each
/// component is the L2-normalized mean of its rows. The contrastive pool is
/// the set of all components of all shots, labelled by shot true class,
/// averaged with weight 1/(sum of R'_k).
template <typename Scalar>
Scalar ccns_loss(const std::vector<MatrixX<Scalar>>& shot_rows,
                 const std::vector<int>& true_classes, int r, Scalar tau,
                 std::vector<MatrixX<Scalar>>* d_rows = nullptr,
                 const ComponentPlan* frozen = nullptr, ComponentPlan* plan_out = nullptr) {
  const size_t k = shot_rows.size();
  if (k < 2) throw std::invalid_argument("ccns_loss: contrast undefined for a single shot");
  if (true_classes.size() != k) throw std::invalid_argument("ccns_loss: label count mismatch");
  if (r < 1) throw std::invalid_argument("ccns_loss: R must be >= 1");

  const Index d = shot_rows[0].cols();
  ComponentPlan local;
  const ComponentPlan* plan = frozen;
  if (!plan) {
    local.seeds.resize(k);
    local.assignment.resize(k);
    for (size_t s = 0; s < k; ++s) {
      if (shot_rows[s].rows() == 0)
        throw std::invalid_argument("ccns_loss: shot without foreground rows");
      const Index r_eff = std::min<Index>(r, shot_rows[s].rows());
      local.seeds[s] = farthest_point_sampling(shot_rows[s], r_eff);
      local.assignment[s] = assign_to_seeds(shot_rows[s], local.seeds[s]);
    }
    plan = &local;
  }
  if (plan_out) *plan_out = *plan;

  // Aggregate components: normalized mean per (shot, component).
  struct Member {
    size_t shot;
    std::vector<Index> rows;
  };
  std::vector<Member> comps;
  std::vector<int> comp_labels;
  std::vector<VectorX<Scalar>> comp_means;
  for (size_t s = 0; s < k; ++s) {
    const size_t n_comp = plan->seeds[s].size();
    std::vector<std::vector<Index>> rows_of(n_comp);
    for (Index i = 0; i < static_cast<Index>(plan->assignment[s].size()); ++i)
      rows_of[static_cast<size_t>(plan->assignment[s][static_cast<size_t>(i)])].push_back(i);
    for (size_t c = 0; c < n_comp; ++c) {
      if (rows_of[c].empty()) continue;  // unreachable with FPS seeds, kept for frozen plans
      comps.push_back({s, rows_of[c]});
      comp_labels.push_back(true_classes[s]);
      comp_means.push_back(mean_rows(shot_rows[s], rows_of[c]));
    }
  }

  const Index n = static_cast<Index>(comps.size());
  MatrixX<Scalar> z(n, d);
  for (Index i = 0; i < n; ++i)
    z.row(i) = detail::normalize_guarded(comp_means[static_cast<size_t>(i)]).transpose();

  MatrixX<Scalar> dz;
  const Scalar loss =
      supervised_contrastive(z, comp_labels, tau, d_rows ? &dz : nullptr);

  if (d_rows) {
    d_rows->resize(k);
    for (size_t s = 0; s < k; ++s) (*d_rows)[s].setZero(shot_rows[s].rows(), d);
    for (Index i = 0; i < n; ++i) {
      const Member& mem = comps[static_cast<size_t>(i)];
      const VectorX<Scalar>& y = comp_means[static_cast<size_t>(i)];
      const Scalar norm = y.norm();
      if (norm < Scalar(kNormGuard)) continue;  // guard output, zero gradient
      const VectorX<Scalar> zi = z.row(i).transpose();
      const VectorX<Scalar> dzi = dz.row(i).transpose();
      const VectorX<Scalar> dy = (dzi - zi.dot(dzi) * zi) / norm;
      const VectorX<Scalar> per_row = dy / static_cast<Scalar>(mem.rows.size());
      for (Index rrow : mem.rows) (*d_rows)[mem.shot].row(rrow) += per_row.transpose();
    }
  }
  return loss;
}

template <typename Scalar>
Scalar combined_loss(Scalar ce, Scalar ccns, Scalar lambda) {
  return ce + lambda * ccns;
}

}  // namespace rfseg
