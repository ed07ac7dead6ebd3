#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rfseg/rng.hpp"
#include "rfseg/types.hpp"

namespace rfseg {

/// Rows with projection norm below this emit the first standard basis
/// vector instead of dividing by ~0; their gradient is zero.
inline constexpr double kNormGuard = 1e-12;

struct NetDims {
  int in = kInputDim;
  int h1 = 64;
  int h2 = 64;
  int feat = 64;
  int proj = 128;
  int classes = 0;  // classifier width, 0 = no classifier head

  bool operator==(const NetDims&) const = default;
};

enum class ParamGroup { backbone, projection, classifier };

/// Which embedding feeds prototypes, the training distance head and label
/// propagation: the raw backbone features or the L2-normalized projection.
enum class FeatureSpace { backbone, projection };

/// Point-wise MLP with a global max-pool branch:
///   trunk   in -> h1 -> h2 (affine+ReLU each)
///   concat  [h2, maxpool(h2)] per point
///   head    2*h2 -> feat (affine+ReLU)
///   proj    feat -> proj (affine, then row L2 normalization)
///   cls     feat -> classes (affine, pretraining only)
template <typename Scalar>
struct EmbeddingNet {
  NetDims dims;
  MatrixX<Scalar> W1, W2, W3, W4, W5;
  VectorX<Scalar> b1, b2, b3, b4, b5;

  static EmbeddingNet zeros(const NetDims& d) {
    EmbeddingNet n;
    n.dims = d;
    n.W1 = MatrixX<Scalar>::Zero(d.h1, d.in);
    n.W2 = MatrixX<Scalar>::Zero(d.h2, d.h1);
    n.W3 = MatrixX<Scalar>::Zero(d.feat, 2 * d.h2);
    n.W4 = MatrixX<Scalar>::Zero(d.proj, d.feat);
    n.W5 = MatrixX<Scalar>::Zero(d.classes, d.feat);
    n.b1 = VectorX<Scalar>::Zero(d.h1);
    n.b2 = VectorX<Scalar>::Zero(d.h2);
    n.b3 = VectorX<Scalar>::Zero(d.feat);
    n.b4 = VectorX<Scalar>::Zero(d.proj);
    n.b5 = VectorX<Scalar>::Zero(d.classes);
    return n;
  }

  /// He init for the ReLU layers, Xavier for the linear heads, zero biases.
  static EmbeddingNet seeded(const NetDims& d, std::uint64_t seed) {
    EmbeddingNet n = zeros(d);
    Rng rng(mix_seed(seed, 0x6e6574));
    auto fill = [&rng](MatrixX<Scalar>& w, double std) {
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(rng.normal(0.0, std));
    };
    fill(n.W1, std::sqrt(2.0 / d.in));
    fill(n.W2, std::sqrt(2.0 / d.h1));
    fill(n.W3, std::sqrt(2.0 / (2 * d.h2)));
    fill(n.W4, std::sqrt(1.0 / d.feat));
    if (d.classes > 0) fill(n.W5, std::sqrt(1.0 / d.feat));
    return n;
  }

  template <typename T>
  EmbeddingNet<T> cast() const {
    EmbeddingNet<T> n;
    n.dims = dims;
    n.W1 = W1.template cast<T>();
    n.W2 = W2.template cast<T>();
    n.W3 = W3.template cast<T>();
    n.W4 = W4.template cast<T>();
    n.W5 = W5.template cast<T>();
    n.b1 = b1.template cast<T>();
    n.b2 = b2.template cast<T>();
    n.b3 = b3.template cast<T>();
    n.b4 = b4.template cast<T>();
    n.b5 = b5.template cast<T>();
    return n;
  }

  Index parameter_count() const {
    return W1.size() + W2.size() + W3.size() + W4.size() + W5.size() + b1.size() +
           b2.size() + b3.size() + b4.size() + b5.size();
  }

  bool all_finite() const {
    return W1.allFinite() && W2.allFinite() && W3.allFinite() && W4.allFinite() &&
           W5.allFinite() && b1.allFinite() && b2.allFinite() && b3.allFinite() &&
           b4.allFinite() && b5.allFinite();
  }
};

/// Visits every parameter tensor as (name, group, matrix-or-vector&).
template <typename Net, typename Fn>
void visit_params(Net& net, Fn&& fn) {
  fn("W1", ParamGroup::backbone, net.W1);
  fn("b1", ParamGroup::backbone, net.b1);
  fn("W2", ParamGroup::backbone, net.W2);
  fn("b2", ParamGroup::backbone, net.b2);
  fn("W3", ParamGroup::backbone, net.W3);
  fn("b3", ParamGroup::backbone, net.b3);
  fn("W4", ParamGroup::projection, net.W4);
  fn("b4", ParamGroup::projection, net.b4);
  fn("W5", ParamGroup::classifier, net.W5);
  fn("b5", ParamGroup::classifier, net.b5);
}

/// Visits parameter/gradient/moment tensors in lockstep.
template <typename A, typename B, typename C, typename D, typename Fn>
void zip_params(A& p, B& g, C& m, D& v, Fn&& fn) {
  fn(ParamGroup::backbone, p.W1, g.W1, m.W1, v.W1);
  fn(ParamGroup::backbone, p.b1, g.b1, m.b1, v.b1);
  fn(ParamGroup::backbone, p.W2, g.W2, m.W2, v.W2);
  fn(ParamGroup::backbone, p.b2, g.b2, m.b2, v.b2);
  fn(ParamGroup::backbone, p.W3, g.W3, m.W3, v.W3);
  fn(ParamGroup::backbone, p.b3, g.b3, m.b3, v.b3);
  fn(ParamGroup::projection, p.W4, g.W4, m.W4, v.W4);
  fn(ParamGroup::projection, p.b4, g.b4, m.b4, v.b4);
  fn(ParamGroup::classifier, p.W5, g.W5, m.W5, v.W5);
  fn(ParamGroup::classifier, p.b5, g.b5, m.b5, v.b5);
}

/// Assembles the m×9 input block: xyz, rgb, and xyz normalized to the
/// cloud's bounding box (degenerate axes map to 0).
template <typename Scalar>
MatrixX<Scalar> input_features(const PointCloud& cloud) {
  const Index m = cloud.size();
  MatrixX<Scalar> x(m, kInputDim);
  x.template leftCols<3>() = cloud.coords.cast<Scalar>();
  x.template middleCols<3>(3) = cloud.colors.cast<Scalar>();
  const Eigen::Vector3f lo = cloud.coords.colwise().minCoeff();
  const Eigen::Vector3f hi = cloud.coords.colwise().maxCoeff();
  for (int a = 0; a < 3; ++a) {
    const float extent = hi(a) - lo(a);
    if (extent > 0.0f)
      x.col(6 + a) =
          ((cloud.coords.col(a).array() - lo(a)) / extent).template cast<Scalar>();
    else
      x.col(6 + a).setZero();
  }
  return x;
}

template <typename Scalar>
struct ForwardCache {
  MatrixX<Scalar> X;
  MatrixX<Scalar> H1, H2;
  std::vector<Index> pool_arg;  // per h2 channel, first row attaining the max
  MatrixX<Scalar> C;
  MatrixX<Scalar> F;           // backbone features, m×feat
  MatrixX<Scalar> Z0;
  VectorX<Scalar> znorm;
  MatrixX<Scalar> Z;           // unit-norm projections, m×proj
  MatrixX<Scalar> logits;      // m×classes, empty when not requested
};

template <typename Scalar>
void forward(const EmbeddingNet<Scalar>& net, const MatrixX<Scalar>& x,
             ForwardCache<Scalar>& cache, bool want_logits = false) {
  if (!x.allFinite()) throw std::invalid_argument("forward: non-finite input");
  if (x.cols() != net.dims.in) throw std::invalid_argument("forward: input width mismatch");
  const Index m = x.rows();
  const NetDims& d = net.dims;

  cache.X = x;
  cache.H1 = ((x * net.W1.transpose()).rowwise() + net.b1.transpose()).cwiseMax(Scalar(0));
  cache.H2 =
      ((cache.H1 * net.W2.transpose()).rowwise() + net.b2.transpose()).cwiseMax(Scalar(0));

  cache.pool_arg.assign(static_cast<size_t>(d.h2), 0);
  Eigen::RowVectorX<Scalar> pooled(d.h2);
  for (int j = 0; j < d.h2; ++j) {
    Index arg = 0;
    pooled(j) = cache.H2.col(j).maxCoeff(&arg);
    cache.pool_arg[static_cast<size_t>(j)] = arg;
  }

  cache.C.resize(m, 2 * d.h2);
  cache.C.leftCols(d.h2) = cache.H2;
  cache.C.rightCols(d.h2) = pooled.replicate(m, 1);

  cache.F =
      ((cache.C * net.W3.transpose()).rowwise() + net.b3.transpose()).cwiseMax(Scalar(0));
  cache.Z0 = (cache.F * net.W4.transpose()).rowwise() + net.b4.transpose();

  cache.znorm = cache.Z0.rowwise().norm();
  cache.Z.resize(m, d.proj);
  for (Index i = 0; i < m; ++i) {
    if (cache.znorm(i) < Scalar(kNormGuard)) {
      cache.Z.row(i).setZero();
      cache.Z(i, 0) = Scalar(1);
    } else {
      cache.Z.row(i) = cache.Z0.row(i) / cache.znorm(i);
    }
  }

  if (want_logits) {
    if (d.classes <= 0) throw std::invalid_argument("forward: net has no classifier head");
    cache.logits = (cache.F * net.W5.transpose()).rowwise() + net.b5.transpose();
  } else {
    cache.logits.resize(0, 0);
  }
}

template <typename Scalar>
ForwardCache<Scalar> forward(const EmbeddingNet<Scalar>& net, const PointCloud& cloud,
                             bool want_logits = false) {
  ForwardCache<Scalar> cache;
  forward(net, input_features<Scalar>(cloud), cache, want_logits);
  return cache;
}

/// Reverse pass. `d_feat`, `d_proj` and `d_logits` are the loss gradients
/// w.r.t. cache.F, cache.Z and cache.logits (any of them may be empty).
/// Gradients accumulate into `grads`, so one struct can collect a whole
/// episode before the optimizer step.
template <typename Scalar>
void backward(const EmbeddingNet<Scalar>& net, const ForwardCache<Scalar>& cache,
              const MatrixX<Scalar>& d_feat, const MatrixX<Scalar>& d_proj,
              const MatrixX<Scalar>& d_logits, EmbeddingNet<Scalar>& grads) {
  const Index m = cache.X.rows();
  const NetDims& d = net.dims;

  MatrixX<Scalar> dF = d_feat.size() > 0 ? d_feat : MatrixX<Scalar>::Zero(m, d.feat);

  if (d_logits.size() > 0) {
    grads.W5.noalias() += d_logits.transpose() * cache.F;
    grads.b5 += d_logits.colwise().sum().transpose();
    dF.noalias() += d_logits * net.W5;
  }

  if (d_proj.size() > 0) {
    MatrixX<Scalar> dZ0(m, d.proj);
    for (Index i = 0; i < m; ++i) {
      if (cache.znorm(i) < Scalar(kNormGuard)) {
        dZ0.row(i).setZero();
      } else {
        const Scalar dot = d_proj.row(i).dot(cache.Z.row(i));
        dZ0.row(i) = (d_proj.row(i) - dot * cache.Z.row(i)) / cache.znorm(i);
      }
    }
    grads.W4.noalias() += dZ0.transpose() * cache.F;
    grads.b4 += dZ0.colwise().sum().transpose();
    dF.noalias() += dZ0 * net.W4;
  }

  const MatrixX<Scalar> dA3 =
      dF.array() * (cache.F.array() > Scalar(0)).template cast<Scalar>();
  grads.W3.noalias() += dA3.transpose() * cache.C;
  grads.b3 += dA3.colwise().sum().transpose();
  const MatrixX<Scalar> dC = dA3 * net.W3;

  MatrixX<Scalar> dH2 = dC.leftCols(d.h2);
  const Eigen::RowVectorX<Scalar> dPool = dC.rightCols(d.h2).colwise().sum();
  for (int j = 0; j < d.h2; ++j) dH2(cache.pool_arg[static_cast<size_t>(j)], j) += dPool(j);

  const MatrixX<Scalar> dA2 =
      dH2.array() * (cache.H2.array() > Scalar(0)).template cast<Scalar>();
  grads.W2.noalias() += dA2.transpose() * cache.H1;
  grads.b2 += dA2.colwise().sum().transpose();
  const MatrixX<Scalar> dH1 = dA2 * net.W2;

  const MatrixX<Scalar> dA1 =
      dH1.array() * (cache.H1.array() > Scalar(0)).template cast<Scalar>();
  grads.W1.noalias() += dA1.transpose() * cache.X;
  grads.b1 += dA1.colwise().sum().transpose();
}

}  // namespace rfseg
