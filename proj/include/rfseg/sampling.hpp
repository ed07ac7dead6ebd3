#pragma once

#include <Eigen/Core>

#include <limits>
#include <stdexcept>
#include <vector>

#include "rfseg/types.hpp"

namespace rfseg {

/// Farthest point sampling over row vectors.
///
/// The first seed is the row farthest from the centroid unless `start`
/// names a row explicitly (seeded-random starts go through that parameter).
/// Every later seed maximizes the minimum Euclidean distance to the rows
/// already selected. All ties break toward the lowest row index, which makes
/// the result deterministic.
template <typename Derived>
std::vector<Index> farthest_point_sampling(const Eigen::MatrixBase<Derived>& vectors,
                                           Index count, Index start = -1) {
  using Scalar = typename Derived::Scalar;
  const Index n = vectors.rows();
  if (count < 1) throw std::invalid_argument("farthest_point_sampling: count must be >= 1");
  if (count > n) throw std::invalid_argument("farthest_point_sampling: insufficient points");
  if (!vectors.allFinite())
    throw std::invalid_argument("farthest_point_sampling: non-finite input");
  if (start >= n) throw std::invalid_argument("farthest_point_sampling: start out of range");

  std::vector<Index> selected;
  selected.reserve(static_cast<size_t>(count));

  Index first = start;
  if (first < 0) {
    const Eigen::RowVectorX<Scalar> centroid = vectors.colwise().mean();
    Scalar best = -1;
    first = 0;
    for (Index i = 0; i < n; ++i) {
      const Scalar d = (vectors.row(i) - centroid).squaredNorm();
      if (d > best) {
        best = d;
        first = i;
      }
    }
  }
  selected.push_back(first);

  VectorX<Scalar> min_dist(n);
  for (Index i = 0; i < n; ++i)
    min_dist(i) = (vectors.row(i) - vectors.row(first)).squaredNorm();
  min_dist(first) = Scalar(-1);  // negative marks selected rows

  while (static_cast<Index>(selected.size()) < count) {
    Index next = -1;
    Scalar best = -1;
    for (Index i = 0; i < n; ++i) {
      if (min_dist(i) < Scalar(0)) continue;  // already selected
      if (min_dist(i) > best) {
        best = min_dist(i);
        next = i;
      }
    }
    selected.push_back(next);
    min_dist(next) = Scalar(-1);
    for (Index i = 0; i < n; ++i) {
      if (min_dist(i) < Scalar(0)) continue;
      const Scalar d = (vectors.row(i) - vectors.row(next)).squaredNorm();
      if (d < min_dist(i)) min_dist(i) = d;
    }
  }
  return selected;
}

/// Assigns every row to the nearest seed row; returns the seed position
/// (not the seed's row index) per row. Ties go to the lowest seed position.
template <typename Derived>
std::vector<int> assign_to_seeds(const Eigen::MatrixBase<Derived>& vectors,
                                 const std::vector<Index>& seeds) {
  using Scalar = typename Derived::Scalar;
  const Index n = vectors.rows();
  if (seeds.empty()) throw std::invalid_argument("assign_to_seeds: empty seed list");
  for (Index s : seeds)
    if (s < 0 || s >= n) throw std::invalid_argument("assign_to_seeds: seed index out of range");

  std::vector<int> component(static_cast<size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    Scalar best = std::numeric_limits<Scalar>::max();
    int arg = 0;
    for (size_t p = 0; p < seeds.size(); ++p) {
      const Scalar d = (vectors.row(i) - vectors.row(seeds[p])).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(p);
      }
    }
    component[static_cast<size_t>(i)] = arg;
  }
  return component;
}

}  // namespace rfseg
