#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "rfseg/types.hpp"

namespace rfseg {

/// Splits the foreground of a shot into axis-aligned cells of its bounding
/// box. Returns the point indices of every non-empty cell, ordered by cell
/// id (x fastest). Points on an interior cell boundary fall into the
/// higher-index cell; the box maximum falls into the last cell.
inline std::vector<std::vector<Index>> split_foreground(const MatrixX3f& coords,
                                                        const ArrayXb& mask,
                                                        const ScaleSpec& scale) {
  scale.validate();
  if (coords.rows() != mask.size())
    throw std::invalid_argument("split_foreground: mask size mismatch");

  std::vector<Index> fg;
  for (Index i = 0; i < mask.size(); ++i)
    if (mask(i)) fg.push_back(i);
  if (fg.empty()) throw std::invalid_argument("split_foreground: empty foreground");

  Eigen::Vector3f lo = coords.row(fg[0]);
  Eigen::Vector3f hi = lo;
  for (Index i : fg) {
    lo = lo.cwiseMin(coords.row(i).transpose());
    hi = hi.cwiseMax(coords.row(i).transpose());
  }

  const int cuts[3] = {scale.nx, scale.ny, scale.nz};
  std::vector<std::vector<Index>> cells(static_cast<size_t>(scale.cells()));
  for (Index i : fg) {
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const float extent = hi(a) - lo(a);
      int c = 0;
      if (extent > 0.0f) {
        c = static_cast<int>(std::floor((coords(i, a) - lo(a)) / extent * cuts[a]));
        if (c < 0) c = 0;
        if (c >= cuts[a]) c = cuts[a] - 1;
      }
      idx[a] = c;
    }
    const int cell = idx[0] + cuts[0] * (idx[1] + cuts[1] * idx[2]);
    cells[static_cast<size_t>(cell)].push_back(i);
  }

  std::vector<std::vector<Index>> out;
  for (auto& c : cells)
    if (!c.empty()) out.push_back(std::move(c));
  return out;
}

inline std::vector<std::vector<Index>> split_foreground(const SupportShot& shot,
                                                        const ScaleSpec& scale) {
  return split_foreground(shot.cloud.coords, shot.mask, scale);
}

/// Mean of the masked feature rows.
template <typename Derived>
VectorX<typename Derived::Scalar> mean_foreground_feature(
    const Eigen::MatrixBase<Derived>& features, const ArrayXb& mask) {
  using Scalar = typename Derived::Scalar;
  if (features.rows() != mask.size())
    throw std::invalid_argument("mean_foreground_feature: mask size mismatch");
  VectorX<Scalar> sum = VectorX<Scalar>::Zero(features.cols());
  Index count = 0;
  for (Index i = 0; i < mask.size(); ++i) {
    if (!mask(i)) continue;
    sum += features.row(i).transpose();
    ++count;
  }
  if (count == 0) throw std::invalid_argument("mean_foreground_feature: empty mask");
  return sum / static_cast<Scalar>(count);
}

/// Mean of an explicit row subset.
template <typename Derived>
VectorX<typename Derived::Scalar> mean_rows(const Eigen::MatrixBase<Derived>& features,
                                            const std::vector<Index>& rows) {
  using Scalar = typename Derived::Scalar;
  if (rows.empty()) throw std::invalid_argument("mean_rows: empty row set");
  VectorX<Scalar> sum = VectorX<Scalar>::Zero(features.cols());
  for (Index r : rows) sum += features.row(r).transpose();
  return sum / static_cast<Scalar>(rows.size());
}

}  // namespace rfseg
