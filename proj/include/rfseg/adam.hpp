#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "rfseg/network.hpp"

namespace rfseg {

template <typename Scalar>
struct AdamConfig {
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

template <typename Scalar>
struct AdamState {
  EmbeddingNet<Scalar> m;
  EmbeddingNet<Scalar> v;
  long step = 0;

  static AdamState like(const EmbeddingNet<Scalar>& net) {
    AdamState st;
    st.m = EmbeddingNet<Scalar>::zeros(net.dims);
    st.v = EmbeddingNet<Scalar>::zeros(net.dims);
    return st;
  }
};

/// One Adam update on a single tensor; factored out so the bias-corrected
/// step can be unit-tested on scalars.
template <typename Tensor, typename Scalar>
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long step,
                 Scalar lr, const AdamConfig<Scalar>& cfg) {
  m = cfg.beta1 * m + (Scalar(1) - cfg.beta1) * grad;
  v.array() = cfg.beta2 * v.array() + (Scalar(1) - cfg.beta2) * grad.array().square();
  const Scalar bc1 = Scalar(1) - std::pow(cfg.beta1, Scalar(step));
  const Scalar bc2 = Scalar(1) - std::pow(cfg.beta2, Scalar(step));
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

/// Adam step over the whole net with one learning rate per parameter group
/// (order: backbone, projection, classifier). A group rate of 0 freezes it.
template <typename Scalar>
void adam_step(EmbeddingNet<Scalar>& net, const EmbeddingNet<Scalar>& grads,
               AdamState<Scalar>& state, const std::array<Scalar, 3>& group_lr,
               const AdamConfig<Scalar>& cfg = {}) {
  if (!grads.all_finite()) throw std::runtime_error("adam_step: non-finite gradients");
  ++state.step;
  zip_params(net, grads, state.m, state.v,
             [&](ParamGroup group, auto& p, const auto& g, auto& m, auto& v) {
               if (p.size() == 0) return;
               adam_update(p, g, m, v, state.step, group_lr[static_cast<int>(group)], cfg);
             });
}

template <typename Scalar>
void adam_step(EmbeddingNet<Scalar>& net, const EmbeddingNet<Scalar>& grads,
               AdamState<Scalar>& state, Scalar lr, const AdamConfig<Scalar>& cfg = {}) {
  adam_step(net, grads, state, std::array<Scalar, 3>{lr, lr, lr}, cfg);
}

}  // namespace rfseg
