#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rfseg/geometry.hpp"
#include "rfseg/losses.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

/// W_ij = max(x_i . x_j, 0)^gamma off the diagonal, 0 on it. Callers are
/// expected to pass L2-normalized node features so the entries are bounded
/// ReLU'd cosines.
template <typename Scalar>
MatrixX<Scalar> build_similarity_graph(const MatrixX<Scalar>& nodes, Scalar gamma) {
  if (!nodes.allFinite())
    throw std::invalid_argument("build_similarity_graph: non-finite features");
  const Index k = nodes.rows();
  MatrixX<Scalar> w = (nodes * nodes.transpose()).cwiseMax(Scalar(0));
  w.diagonal().setZero();
  if (gamma != Scalar(1))
    w = w.unaryExpr([gamma](Scalar v) { return std::pow(v, gamma); });
  w.diagonal().setZero();
  return w;
}

template <typename Scalar>
VectorX<Scalar> degrees(const MatrixX<Scalar>& graph) {
  return graph.rowwise().sum();
}

/// Eq-style clean indicator: 1 where the degree strictly exceeds the mean.
/// All-equal degrees therefore yield all zeros; the filter's fallback deals
/// with that downstream.
template <typename Scalar>
std::vector<int> clean_indicator(const VectorX<Scalar>& degree) {
  if (degree.size() < 1) throw std::invalid_argument("clean_indicator: empty degrees");
  const Scalar thr = degree.mean();
  std::vector<int> ind(static_cast<size_t>(degree.size()));
  for (Index i = 0; i < degree.size(); ++i) ind[static_cast<size_t>(i)] = degree(i) > thr ? 1 : 0;
  return ind;
}

struct MdnsConfig {
  std::vector<ScaleSpec> scales{{1, 1, 1}, {2, 2, 1}};
  std::vector<double> gammas{3.0, 1.0};

  void validate() const {
    if (scales.empty()) throw std::invalid_argument("MdnsConfig: no scales");
    if (scales.size() != gammas.size())
      throw std::invalid_argument("MdnsConfig: one gamma per scale required");
    for (const ScaleSpec& s : scales) s.validate();
  }
};

/// Foreground slice of one support shot: coordinates drive the sub-shot
/// splitting, features drive the affinity graph.
template <typename Scalar>
struct ShotForeground {
  MatrixX3f coords;
  MatrixX<Scalar> features;
};

struct FilterResult {
  // [scale][shot][cell] clean indicator of each non-empty sub-shot
  std::vector<std::vector<std::vector<int>>> cell_indicators;
  // [scale][shot] indicator after the per-shot majority vote
  std::vector<std::vector<int>> scale_indicators;
  // [shot] indicator after the cross-scale majority vote
  std::vector<int> final_indicators;
  std::vector<int> retained;
  bool fallback_used = false;
};

namespace detail {

inline int majority_clean(const std::vector<int>& votes) {
  int ones = 0;
  for (int v : votes) ones += v;
  return 2 * ones >= static_cast<int>(votes.size()) ? 1 : 0;  // tie -> clean
}

}  // namespace detail

/// Multi-scale degree-based noise suppression over the K shots of one way.
/// Per scale, every shot's foreground is split into sub-shots whose
/// normalized mean features become nodes of a single affinity graph; degree
/// thresholding marks each node, a per-shot majority vote marks the shot,
/// and a cross-scale majority vote makes the final call. Ties vote clean.
/// An empty retained set falls back to the max-degree shots at scale
/// (1,1,1) so downstream consumers always see at least one shot.
template <typename Scalar>
FilterResult mdns_filter(const std::vector<ShotForeground<Scalar>>& shots,
                         const MdnsConfig& cfg) {
  cfg.validate();
  const size_t k = shots.size();
  if (k == 0) throw std::invalid_argument("mdns_filter: empty support way");
  for (const auto& s : shots)
    if (s.coords.rows() == 0 || s.coords.rows() != s.features.rows())
      throw std::invalid_argument("mdns_filter: bad shot foreground");
  const Index d = shots[0].features.cols();

  FilterResult result;
  result.cell_indicators.resize(cfg.scales.size());
  result.scale_indicators.resize(cfg.scales.size());

  auto scale_nodes = [&](const ScaleSpec& scale, std::vector<std::vector<Index>>& owner_count)
      -> MatrixX<Scalar> {
    std::vector<VectorX<Scalar>> nodes;
    owner_count.assign(k, {});
    for (size_t s = 0; s < k; ++s) {
      const ArrayXb mask = ArrayXb::Constant(shots[s].coords.rows(), true);
      const auto cells = split_foreground(shots[s].coords, mask, scale);
      for (const auto& cell : cells) {
        nodes.push_back(detail::normalize_guarded<Scalar>(mean_rows(shots[s].features, cell)));
        owner_count[s].push_back(static_cast<Index>(nodes.size()) - 1);
      }
    }
    MatrixX<Scalar> m(static_cast<Index>(nodes.size()), d);
    for (size_t i = 0; i < nodes.size(); ++i) m.row(static_cast<Index>(i)) = nodes[i].transpose();
    return m;
  };

  for (size_t si = 0; si < cfg.scales.size(); ++si) {
    std::vector<std::vector<Index>> owners;
    const MatrixX<Scalar> nodes = scale_nodes(cfg.scales[si], owners);
    const auto graph = build_similarity_graph(nodes, static_cast<Scalar>(cfg.gammas[si]));
    const auto ind = clean_indicator(degrees(graph));

    result.cell_indicators[si].resize(k);
    result.scale_indicators[si].resize(k);
    for (size_t s = 0; s < k; ++s) {
      std::vector<int> votes;
      for (Index node : owners[s]) {
        const int v = ind[static_cast<size_t>(node)];
        result.cell_indicators[si][s].push_back(v);
        votes.push_back(v);
      }
      result.scale_indicators[si][s] = detail::majority_clean(votes);
    }
  }

  result.final_indicators.resize(k);
  for (size_t s = 0; s < k; ++s) {
    std::vector<int> votes;
    for (size_t si = 0; si < cfg.scales.size(); ++si)
      votes.push_back(result.scale_indicators[si][s]);
    result.final_indicators[s] = detail::majority_clean(votes);
    if (result.final_indicators[s]) result.retained.push_back(static_cast<int>(s));
  }

  if (result.retained.empty()) {
    // Keep the max-degree shots of the coarsest graph.
    MatrixX<Scalar> nodes(static_cast<Index>(k), d);
    for (size_t s = 0; s < k; ++s) {
      VectorX<Scalar> mean = shots[s].features.colwise().mean();
      nodes.row(static_cast<Index>(s)) = detail::normalize_guarded(mean).transpose();
    }
    Scalar gamma_coarse = static_cast<Scalar>(cfg.gammas[0]);
    for (size_t si = 0; si < cfg.scales.size(); ++si)
      if (cfg.scales[si].cells() == 1) gamma_coarse = static_cast<Scalar>(cfg.gammas[si]);
    const VectorX<Scalar> deg = degrees(build_similarity_graph(nodes, gamma_coarse));
    const Scalar best = deg.maxCoeff();
    for (size_t s = 0; s < k; ++s)
      if (deg(static_cast<Index>(s)) == best) result.retained.push_back(static_cast<int>(s));
    result.fallback_used = true;
  }
  return result;
}

/// Convenience overload over full shots: extracts foreground coordinates
/// and the matching rows of the per-shot feature matrices.
template <typename Scalar>
FilterResult mdns_filter(const std::vector<SupportShot>& shots,
                         const std::vector<MatrixX<Scalar>>& features,
                         const MdnsConfig& cfg) {
  if (shots.size() != features.size())
    throw std::invalid_argument("mdns_filter: feature list mismatch");
  std::vector<ShotForeground<Scalar>> fg(shots.size());
  for (size_t s = 0; s < shots.size(); ++s) {
    const SupportShot& shot = shots[s];
    if (features[s].rows() != shot.cloud.size())
      throw std::invalid_argument("mdns_filter: feature rows mismatch");
    const Index n = shot.foreground_count();
    fg[s].coords.resize(n, 3);
    fg[s].features.resize(n, features[s].cols());
    Index w = 0;
    for (Index i = 0; i < shot.cloud.size(); ++i) {
      if (!shot.mask(i)) continue;
      fg[s].coords.row(w) = shot.cloud.coords.row(i);
      fg[s].features.row(w) = features[s].row(i);
      ++w;
    }
  }
  return mdns_filter(fg, cfg);
}

}  // namespace rfseg
