#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

#include "rfseg/episodic.hpp"
#include "rfseg/fewshot.hpp"
#include "rfseg/mdns.hpp"
#include "rfseg/network.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

enum class InferenceHead { label_propagation, protonet };

inline InferenceHead head_from_string(const std::string& s) {
  if (s == "lp" || s == "label_propagation") return InferenceHead::label_propagation;
  if (s == "protonet") return InferenceHead::protonet;
  throw std::invalid_argument("unknown inference head: " + s);
}

struct InferenceConfig {
  PropagationConfig propagation;
  MdnsConfig mdns;
  bool use_mdns = false;
  InferenceHead head = InferenceHead::label_propagation;
  FeatureSpace space = FeatureSpace::projection;
};

template <typename Scalar>
struct EpisodeEval {
  std::vector<Eigen::VectorXi> predictions;  // episode labels per query cloud
  std::vector<std::vector<int>> retained;    // shot indices per way
  std::vector<double> prototype_purity;      // foreground prototypes only
  bool fallback_used = false;
};

namespace detail {

/// Episode-level true label of a point: the way whose declared class equals
/// the point's actual class, 0 for background, -1 for out-of-episode
/// foreground objects.
inline int way_of_class(const Episode& episode, int class_id) {
  for (int n = 0; n < episode.n_way; ++n)
    if (episode.way_classes[static_cast<size_t>(n)] == class_id) return n + 1;
  return -1;
}

}  // namespace detail

/// Meta-testing inference for one episode: embed everything, optionally
/// filter each way's support with MDNS on the projection features, build
/// FPS multi-prototypes per class (plus background) from the retained
/// shots' backbone features, and infer query labels transductively (or with
/// the ProtoNet mean-prototype head). Removed shots contribute neither
/// foreground nor background points.
template <typename Scalar>
EpisodeEval<Scalar> evaluate_episode(const EmbeddingNet<Scalar>& net, const Episode& episode,
                                     const InferenceConfig& cfg) {
  cfg.propagation.validate();
  const EpisodeBatch<Scalar> batch = forward_episode(net, episode);
  const int n_way = episode.n_way;
  const int n_classes = n_way + 1;
  const bool proj = cfg.space == FeatureSpace::projection;
  const Index d_feat = proj ? net.dims.proj : net.dims.feat;
  auto embed_of = [proj](const ForwardCache<Scalar>& cache) -> const MatrixX<Scalar>& {
    return proj ? cache.Z : cache.F;
  };

  EpisodeEval<Scalar> eval;
  eval.retained.resize(static_cast<size_t>(n_way));
  for (int n = 0; n < n_way; ++n) {
    if (cfg.use_mdns) {
      std::vector<MatrixX<Scalar>> proj;
      for (const auto& cache : batch.support[static_cast<size_t>(n)]) proj.push_back(cache.Z);
      const FilterResult fr =
          mdns_filter(episode.support[static_cast<size_t>(n)], proj, cfg.mdns);
      eval.retained[static_cast<size_t>(n)] = fr.retained;
      eval.fallback_used = eval.fallback_used || fr.fallback_used;
    } else {
      for (int k = 0; k < episode.k_shot; ++k)
        eval.retained[static_cast<size_t>(n)].push_back(k);
    }
  }

  // Class pools over retained shots: backbone features plus the hidden
  // episode-true label per point for purity bookkeeping.
  std::vector<MatrixX<Scalar>> pools(static_cast<size_t>(n_classes));
  std::vector<std::vector<int>> pool_truth(static_cast<size_t>(n_classes));
  {
    std::vector<std::vector<Eigen::RowVectorX<Scalar>>> rows(static_cast<size_t>(n_classes));
    for (int n = 0; n < n_way; ++n) {
      for (int k : eval.retained[static_cast<size_t>(n)]) {
        const SupportShot& shot = episode.support[static_cast<size_t>(n)][static_cast<size_t>(k)];
        const auto& cache = batch.support[static_cast<size_t>(n)][static_cast<size_t>(k)];
        const int fg_truth = detail::way_of_class(episode, shot.true_class);
        for (Index i = 0; i < shot.cloud.size(); ++i) {
          if (shot.mask(i)) {
            rows[static_cast<size_t>(n + 1)].push_back(embed_of(cache).row(i));
            pool_truth[static_cast<size_t>(n + 1)].push_back(fg_truth);
          } else {
            const int t = detail::way_of_class(episode, shot.cloud.labels(i));
            rows[0].push_back(embed_of(cache).row(i));
            pool_truth[0].push_back(t < 0 ? kBackgroundLabel : t);
          }
        }
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      pools[static_cast<size_t>(c)].resize(static_cast<Index>(rows[static_cast<size_t>(c)].size()),
                                           d_feat);
      for (size_t r = 0; r < rows[static_cast<size_t>(c)].size(); ++r)
        pools[static_cast<size_t>(c)].row(static_cast<Index>(r)) = rows[static_cast<size_t>(c)][r];
    }
  }

  std::vector<Prototype<Scalar>> prototypes;
  for (int c = 0; c < n_classes; ++c) {
    if (pools[static_cast<size_t>(c)].rows() == 0) continue;  // skipped with a shrug
    std::vector<Prototype<Scalar>> ps;
    if (cfg.head == InferenceHead::protonet) {
      ps.push_back(
          global_prototype(pools[static_cast<size_t>(c)], pool_truth[static_cast<size_t>(c)], c));
    } else {
      ps = multi_prototype_generation(pools[static_cast<size_t>(c)],
                                      pool_truth[static_cast<size_t>(c)], c,
                                      cfg.propagation.n_proto);
    }
    for (auto& p : ps) {
      if (p.class_id != kBackgroundLabel) eval.prototype_purity.push_back(p.purity);
      prototypes.push_back(std::move(p));
    }
  }
  if (prototypes.empty()) throw std::runtime_error("evaluate_episode: no prototypes");

  if (cfg.head == InferenceHead::protonet) {
    for (const auto& qc : batch.queries)
      eval.predictions.push_back(protonet_predict(prototypes, embed_of(qc)));
    return eval;
  }

  // Transductive propagation over prototypes and all query points at once.
  Index n_query = 0;
  for (const auto& qc : batch.queries) n_query += qc.F.rows();

  const Index n_proto_nodes = static_cast<Index>(prototypes.size());
  MatrixX<Scalar> nodes(n_proto_nodes + n_query, d_feat);
  MatrixX<Scalar> seeds = MatrixX<Scalar>::Zero(n_proto_nodes + n_query, n_classes);
  for (Index i = 0; i < n_proto_nodes; ++i) {
    nodes.row(i) = prototypes[static_cast<size_t>(i)].vec.transpose();
    seeds(i, prototypes[static_cast<size_t>(i)].class_id) = Scalar(1);
  }
  Index w = n_proto_nodes;
  for (const auto& qc : batch.queries) {
    nodes.middleRows(w, qc.F.rows()) = embed_of(qc);
    w += qc.F.rows();
  }

  const MatrixX<Scalar> affinity = build_knn_graph(nodes, cfg.propagation.k_nn);
  const MatrixX<Scalar> scores =
      label_propagate(affinity, seeds, static_cast<Scalar>(cfg.propagation.alpha));
  const Eigen::VectorXi flat = predict_query(scores, n_proto_nodes);

  w = 0;
  for (const auto& qc : batch.queries) {
    eval.predictions.push_back(flat.segment(w, qc.F.rows()));
    w += qc.F.rows();
  }
  return eval;
}

}  // namespace rfseg
