#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "rfseg/fewshot.hpp"
#include "rfseg/losses.hpp"
#include "rfseg/network.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

/// Forward caches for one episode, support shots and queries alike.
template <typename Scalar>
struct EpisodeBatch {
  std::vector<std::vector<ForwardCache<Scalar>>> support;  // [way][shot]
  std::vector<ForwardCache<Scalar>> queries;
};

template <typename Scalar>
EpisodeBatch<Scalar> forward_episode(const EmbeddingNet<Scalar>& net, const Episode& episode) {
  EpisodeBatch<Scalar> batch;
  batch.support.resize(static_cast<size_t>(episode.n_way));
  for (int n = 0; n < episode.n_way; ++n)
    for (const SupportShot& shot : episode.support[static_cast<size_t>(n)])
      batch.support[static_cast<size_t>(n)].push_back(forward(net, shot.cloud));
  for (const PointCloud& q : episode.queries) batch.queries.push_back(forward(net, q));
  return batch;
}

/// Discrete structure of one episode loss evaluation: the FPS partitions of
/// the per-class prototype pools and the CCNS component plans per way. The
/// loss gradient treats all of it as constant, so the finite-difference
/// oracle re-evaluates under a frozen plan.
struct EpisodePlan {
  std::vector<ComponentSeedPlan> prototype_plans;  // class 0..N
  std::vector<ComponentPlan> ccns_plans;           // per way
};

template <typename Scalar>
struct EpisodeLossResult {
  Scalar total = 0;
  Scalar ce = 0;
  Scalar ccns = 0;
};

namespace detail {

/// (way, shot, row) provenance of one pooled support point.
struct PoolEntry {
  int way;
  int shot;
  Index row;
};

}  // namespace detail

/// Episodic training objective: cross-entropy of the query points against
/// log-sum-exp-smoothed distances to per-class FPS multi-prototypes, plus
/// lambda times the component-level clean-noise separation averaged over
/// ways. Gradients (when requested) flow into the query features and, via
/// the prototype means, into the support features; FPS seed choices and
/// component assignments are constants of the evaluation.
template <typename Scalar>
EpisodeLossResult<Scalar> episode_loss(const EmbeddingNet<Scalar>& net, const Episode& episode,
                                       const LossConfig<Scalar>& loss_cfg, int n_proto,
                                       EmbeddingNet<Scalar>* grads,
                                       const EpisodePlan* frozen = nullptr,
                                       EpisodePlan* plan_out = nullptr,
                                       FeatureSpace space = FeatureSpace::projection) {
  loss_cfg.validate();
  if (episode.queries.empty()) throw std::invalid_argument("episode_loss: no queries");

  const EpisodeBatch<Scalar> batch = forward_episode(net, episode);
  const int n_way = episode.n_way;
  const int n_classes = n_way + 1;
  const bool proj = space == FeatureSpace::projection;
  const Index d_feat = proj ? net.dims.proj : net.dims.feat;
  auto embed_of = [proj](const ForwardCache<Scalar>& cache) -> const MatrixX<Scalar>& {
    return proj ? cache.Z : cache.F;
  };

  EpisodePlan local_plan;
  local_plan.prototype_plans.resize(static_cast<size_t>(n_classes));
  local_plan.ccns_plans.resize(static_cast<size_t>(n_way));

  // Per-class pools of support features: way classes from their foreground
  // rows, background from the complement of every shot.
  std::vector<MatrixX<Scalar>> pools(static_cast<size_t>(n_classes));
  std::vector<std::vector<detail::PoolEntry>> provenance(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    std::vector<detail::PoolEntry> rows;
    for (int n = 0; n < n_way; ++n) {
      if (c > 0 && n != c - 1) continue;
      for (int k = 0; k < episode.k_shot; ++k) {
        const SupportShot& shot = episode.support[static_cast<size_t>(n)][static_cast<size_t>(k)];
        for (Index i = 0; i < shot.cloud.size(); ++i) {
          const bool fg = shot.mask(i);
          if ((c > 0 && fg) || (c == 0 && !fg)) rows.push_back({n, k, i});
        }
      }
    }
    if (rows.empty()) throw std::invalid_argument("episode_loss: empty class pool");
    MatrixX<Scalar> pool(static_cast<Index>(rows.size()), d_feat);
    for (size_t r = 0; r < rows.size(); ++r)
      pool.row(static_cast<Index>(r)) = embed_of(
          batch.support[static_cast<size_t>(rows[r].way)][static_cast<size_t>(rows[r].shot)])
              .row(rows[r].row);
    pools[static_cast<size_t>(c)] = std::move(pool);
    provenance[static_cast<size_t>(c)] = std::move(rows);
  }

  // Prototypes per class under a fresh or frozen partition.
  std::vector<MatrixX<Scalar>> protos(static_cast<size_t>(n_classes));
  std::vector<std::vector<std::vector<Index>>> members(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    const MatrixX<Scalar>& pool = pools[static_cast<size_t>(c)];
    ComponentSeedPlan plan;
    if (frozen) {
      plan = frozen->prototype_plans[static_cast<size_t>(c)];
    } else {
      plan.seeds = farthest_point_sampling(pool, std::min<Index>(n_proto, pool.rows()));
      plan.assignment = assign_to_seeds(pool, plan.seeds);
    }
    local_plan.prototype_plans[static_cast<size_t>(c)] = plan;

    std::vector<std::vector<Index>> rows_of(plan.seeds.size());
    for (Index i = 0; i < pool.rows(); ++i)
      rows_of[static_cast<size_t>(plan.assignment[static_cast<size_t>(i)])].push_back(i);
    std::vector<std::vector<Index>> nonempty;
    for (auto& r : rows_of)
      if (!r.empty()) nonempty.push_back(std::move(r));

    MatrixX<Scalar> p(static_cast<Index>(nonempty.size()), d_feat);
    for (size_t j = 0; j < nonempty.size(); ++j) {
      VectorX<Scalar> mean = VectorX<Scalar>::Zero(d_feat);
      for (Index r : nonempty[j]) mean += pool.row(r).transpose();
      p.row(static_cast<Index>(j)) = mean.transpose() / static_cast<Scalar>(nonempty[j].size());
    }
    protos[static_cast<size_t>(c)] = std::move(p);
    members[static_cast<size_t>(c)] = std::move(nonempty);
  }

  // Stack query features and labels.
  Index n_query = 0;
  for (const auto& q : batch.queries) n_query += q.F.rows();
  MatrixX<Scalar> query(n_query, d_feat);
  Eigen::VectorXi labels(n_query);
  Index w = 0;
  for (size_t q = 0; q < batch.queries.size(); ++q) {
    const Index rows = batch.queries[q].F.rows();
    query.middleRows(w, rows) = embed_of(batch.queries[q]);
    labels.segment(w, rows) = episode.query_labels[q];
    w += rows;
  }

  // Class scores: log sum_j exp(-||q - p_j||^2), max-shifted per row.
  MatrixX<Scalar> logits(n_query, n_classes);
  std::vector<MatrixX<Scalar>> weights(static_cast<size_t>(n_classes));
  const VectorX<Scalar> qsq = query.rowwise().squaredNorm();
  for (int c = 0; c < n_classes; ++c) {
    const MatrixX<Scalar>& p = protos[static_cast<size_t>(c)];
    MatrixX<Scalar> neg_d2 = 2 * (query * p.transpose());
    neg_d2.colwise() -= qsq;
    neg_d2.rowwise() -= p.rowwise().squaredNorm().transpose();
    MatrixX<Scalar>& wgt = weights[static_cast<size_t>(c)];
    wgt.resize(n_query, p.rows());
    for (Index i = 0; i < n_query; ++i) {
      const Scalar mx = neg_d2.row(i).maxCoeff();
      const Eigen::RowVectorX<Scalar> e = (neg_d2.row(i).array() - mx).exp();
      const Scalar sum = e.sum();
      logits(i, c) = mx + std::log(sum);
      wgt.row(i) = e / sum;
    }
  }

  EpisodeLossResult<Scalar> result;
  MatrixX<Scalar> d_logits;
  result.ce = cross_entropy(logits, labels, grads ? &d_logits : nullptr);

  // CCNS per way over foreground projection rows, labelled by true class.
  std::vector<std::vector<MatrixX<Scalar>>> ccns_rows(static_cast<size_t>(n_way));
  std::vector<std::vector<MatrixX<Scalar>>> ccns_grads(static_cast<size_t>(n_way));
  if (loss_cfg.lambda > Scalar(0)) {
    Scalar acc = 0;
    for (int n = 0; n < n_way; ++n) {
      std::vector<MatrixX<Scalar>> rows(static_cast<size_t>(episode.k_shot));
      std::vector<int> true_classes(static_cast<size_t>(episode.k_shot));
      for (int k = 0; k < episode.k_shot; ++k) {
        const SupportShot& shot = episode.support[static_cast<size_t>(n)][static_cast<size_t>(k)];
        const auto& cache = batch.support[static_cast<size_t>(n)][static_cast<size_t>(k)];
        MatrixX<Scalar> z(shot.foreground_count(), net.dims.proj);
        Index r = 0;
        for (Index i = 0; i < shot.cloud.size(); ++i)
          if (shot.mask(i)) z.row(r++) = cache.Z.row(i);
        rows[static_cast<size_t>(k)] = std::move(z);
        true_classes[static_cast<size_t>(k)] = shot.true_class;
      }
      acc += ccns_loss(rows, true_classes, loss_cfg.components, loss_cfg.tau,
                       grads ? &ccns_grads[static_cast<size_t>(n)] : nullptr,
                       frozen ? &frozen->ccns_plans[static_cast<size_t>(n)] : nullptr,
                       &local_plan.ccns_plans[static_cast<size_t>(n)]);
      ccns_rows[static_cast<size_t>(n)] = std::move(rows);
    }
    result.ccns = acc / static_cast<Scalar>(n_way);
  }
  result.total = combined_loss(result.ce, result.ccns, loss_cfg.lambda);
  if (plan_out) *plan_out = local_plan;
  if (!grads) return result;

  if (!std::isfinite(static_cast<double>(result.total)))
    throw std::runtime_error("episode_loss: non-finite loss");

  // --- backward ------------------------------------------------------------

  MatrixX<Scalar> d_query = MatrixX<Scalar>::Zero(n_query, d_feat);
  std::vector<std::vector<MatrixX<Scalar>>> d_support_F(static_cast<size_t>(n_way));
  std::vector<std::vector<MatrixX<Scalar>>> d_support_Z(static_cast<size_t>(n_way));
  for (int n = 0; n < n_way; ++n) {
    d_support_F[static_cast<size_t>(n)].resize(static_cast<size_t>(episode.k_shot));
    d_support_Z[static_cast<size_t>(n)].resize(static_cast<size_t>(episode.k_shot));
    for (int k = 0; k < episode.k_shot; ++k) {
      const Index m = episode.support[static_cast<size_t>(n)][static_cast<size_t>(k)].cloud.size();
      d_support_F[static_cast<size_t>(n)][static_cast<size_t>(k)] =
          MatrixX<Scalar>::Zero(m, net.dims.feat);
      d_support_Z[static_cast<size_t>(n)][static_cast<size_t>(k)] =
          MatrixX<Scalar>::Zero(m, net.dims.proj);
    }
  }
  auto d_support_of = [&](int way, int shot) -> MatrixX<Scalar>& {
    return proj ? d_support_Z[static_cast<size_t>(way)][static_cast<size_t>(shot)]
                : d_support_F[static_cast<size_t>(way)][static_cast<size_t>(shot)];
  };

  // CE head: d logit_ic / d q_i = -2 (q_i - sum_j w_ij p_j), and the
  // prototype side mirrors it through the softmax weights.
  for (int c = 0; c < n_classes; ++c) {
    const MatrixX<Scalar>& p = protos[static_cast<size_t>(c)];
    const MatrixX<Scalar>& wgt = weights[static_cast<size_t>(c)];
    const VectorX<Scalar> g = d_logits.col(c);

    const MatrixX<Scalar> soft_target = wgt * p;  // n_query x d_feat
    d_query.noalias() += (-2) * (g.asDiagonal() * (query - soft_target));

    const VectorX<Scalar> mass = wgt.transpose() * g;  // per prototype
    MatrixX<Scalar> d_proto = 2 * (wgt.transpose() * (g.asDiagonal() * query));
    d_proto.noalias() -= 2 * (mass.asDiagonal() * p);

    const auto& mem = members[static_cast<size_t>(c)];
    const auto& prov = provenance[static_cast<size_t>(c)];
    for (size_t j = 0; j < mem.size(); ++j) {
      const Eigen::RowVectorX<Scalar> per_row =
          d_proto.row(static_cast<Index>(j)) / static_cast<Scalar>(mem[j].size());
      for (Index r : mem[j]) {
        const detail::PoolEntry& e = prov[static_cast<size_t>(r)];
        d_support_of(e.way, e.shot).row(e.row) += per_row;
      }
    }
  }

  // CCNS: scatter row gradients back to the masked projection rows.
  if (loss_cfg.lambda > Scalar(0)) {
    const Scalar scale = loss_cfg.lambda / static_cast<Scalar>(n_way);
    for (int n = 0; n < n_way; ++n) {
      for (int k = 0; k < episode.k_shot; ++k) {
        const SupportShot& shot = episode.support[static_cast<size_t>(n)][static_cast<size_t>(k)];
        const MatrixX<Scalar>& dz_rows =
            ccns_grads[static_cast<size_t>(n)][static_cast<size_t>(k)];
        MatrixX<Scalar>& dz = d_support_Z[static_cast<size_t>(n)][static_cast<size_t>(k)];
        Index r = 0;
        for (Index i = 0; i < shot.cloud.size(); ++i)
          if (shot.mask(i)) dz.row(i) += scale * dz_rows.row(r++);
      }
    }
  }

  // Through the network.
  const MatrixX<Scalar> empty;
  w = 0;
  for (size_t q = 0; q < batch.queries.size(); ++q) {
    const Index rows = batch.queries[q].F.rows();
    const MatrixX<Scalar> dq = d_query.middleRows(w, rows);
    backward<Scalar>(net, batch.queries[q], proj ? empty : dq, proj ? dq : empty, empty,
                     *grads);
    w += rows;
  }
  for (int n = 0; n < n_way; ++n)
    for (int k = 0; k < episode.k_shot; ++k)
      backward(net, batch.support[static_cast<size_t>(n)][static_cast<size_t>(k)],
               d_support_F[static_cast<size_t>(n)][static_cast<size_t>(k)],
               d_support_Z[static_cast<size_t>(n)][static_cast<size_t>(k)], empty, *grads);

  return result;
}

}  // namespace rfseg
