#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rfseg/adam.hpp"
#include "rfseg/network.hpp"
#include "rfseg/rng.hpp"

using namespace rfseg;

namespace {

MatrixX<double> random_input(Index m, Rng& rng) {
  MatrixX<double> x(m, kInputDim);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < kInputDim; ++j) x(i, j) = rng.normal();
  return x;
}

PointCloud random_cloud(Index m, Rng& rng) {
  PointCloud c;
  c.coords.resize(m, 3);
  c.colors.resize(m, 3);
  c.labels = Eigen::VectorXi::Zero(m);
  for (Index i = 0; i < m; ++i)
    for (int a = 0; a < 3; ++a) {
      c.coords(i, a) = static_cast<float>(rng.uniform());
      c.colors(i, a) = static_cast<float>(rng.uniform());
    }
  return c;
}

template <typename Fn>
void for_each_entry(EmbeddingNet<double>& net, Fn&& fn) {
  visit_params(net, [&](const char*, ParamGroup, auto& t) {
    for (Index j = 0; j < t.cols(); ++j)
      for (Index i = 0; i < t.rows(); ++i) fn(t(i, j));
  });
}

}  // namespace

TEST_CASE("forward is deterministic for a fixed seed") {
  const NetDims dims{.h1 = 16, .h2 = 16, .feat = 8, .proj = 12, .classes = 3};
  const auto net_a = EmbeddingNet<float>::seeded(dims, 99);
  const auto net_b = EmbeddingNet<float>::seeded(dims, 99);
  Rng rng(1);
  const PointCloud cloud = random_cloud(40, rng);
  const auto ca = forward(net_a, cloud, true);
  const auto cb = forward(net_b, cloud, true);
  CHECK(ca.F == cb.F);
  CHECK(ca.Z == cb.Z);
  CHECK(ca.logits == cb.logits);
}

TEST_CASE("permuting points permutes the feature rows identically") {
  const NetDims dims{.h1 = 16, .h2 = 16, .feat = 8, .proj = 12};
  const auto net = EmbeddingNet<double>::seeded(dims, 5);
  Rng rng(2);
  const MatrixX<double> x = random_input(20, rng);

  MatrixX<double> perm(20, kInputDim);
  std::vector<Index> order(20);
  for (Index i = 0; i < 20; ++i) order[static_cast<size_t>(i)] = (i * 7 + 3) % 20;
  for (Index i = 0; i < 20; ++i) perm.row(i) = x.row(order[static_cast<size_t>(i)]);

  ForwardCache<double> ca, cb;
  forward(net, x, ca);
  forward(net, perm, cb);
  for (Index i = 0; i < 20; ++i) {
    CHECK((cb.F.row(i) - ca.F.row(order[static_cast<size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((cb.Z.row(i) - ca.Z.row(order[static_cast<size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("duplicating every point leaves per-point outputs unchanged") {
  const NetDims dims{.h1 = 16, .h2 = 16, .feat = 8, .proj = 12};
  const auto net = EmbeddingNet<double>::seeded(dims, 13);
  Rng rng(3);
  const MatrixX<double> x = random_input(15, rng);
  MatrixX<double> doubled(30, kInputDim);
  doubled << x, x;

  ForwardCache<double> ca, cb;
  forward(net, x, ca);
  forward(net, doubled, cb);
  CHECK((cb.F.topRows(15) - ca.F).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cb.F.bottomRows(15) - ca.F).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("projection rows are unit norm, zero head hits the guard") {
  NetDims dims{.h1 = 8, .h2 = 8, .feat = 8, .proj = 6};
  auto net = EmbeddingNet<double>::seeded(dims, 21);
  Rng rng(4);
  ForwardCache<double> cache;
  forward(net, random_input(10, rng), cache);
  for (Index i = 0; i < 10; ++i) CHECK(cache.Z.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));

  net.W4.setZero();
  net.b4.setZero();
  forward(net, random_input(10, rng), cache);
  for (Index i = 0; i < 10; ++i) {
    CHECK(cache.Z(i, 0) == 1.0);
    CHECK(cache.Z.row(i).tail(5).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("non-finite input raises") {
  const NetDims dims{.h1 = 4, .h2 = 4, .feat = 4, .proj = 4};
  const auto net = EmbeddingNet<double>::seeded(dims, 1);
  MatrixX<double> x = MatrixX<double>::Zero(3, kInputDim);
  x(1, 2) = std::numeric_limits<double>::infinity();
  ForwardCache<double> cache;
  CHECK_THROWS_AS(forward(net, x, cache), std::invalid_argument);
}

TEST_CASE("affine backward: sum loss gives ones bias grad and outer-product weight grad") {
  const NetDims dims{.h1 = 6, .h2 = 6, .feat = 5, .proj = 4, .classes = 3};
  const auto net = EmbeddingNet<double>::seeded(dims, 31);
  Rng rng(6);
  ForwardCache<double> cache;
  forward(net, random_input(1, rng), cache, true);

  EmbeddingNet<double> grads = EmbeddingNet<double>::zeros(dims);
  const MatrixX<double> d_logits = MatrixX<double>::Ones(1, 3);
  const MatrixX<double> empty;
  backward(net, cache, empty, empty, d_logits, grads);

  for (int c = 0; c < 3; ++c) {
    CHECK(grads.b5(c) == doctest::Approx(1.0));
    CHECK((grads.W5.row(c) - cache.F.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("loss independent of a head leaves its gradient exactly zero") {
  const NetDims dims{.h1 = 6, .h2 = 6, .feat = 5, .proj = 4, .classes = 3};
  const auto net = EmbeddingNet<double>::seeded(dims, 33);
  Rng rng(7);
  ForwardCache<double> cache;
  forward(net, random_input(8, rng), cache);
  EmbeddingNet<double> grads = EmbeddingNet<double>::zeros(dims);
  const MatrixX<double> d_feat = MatrixX<double>::Ones(8, 5);
  const MatrixX<double> empty;
  backward(net, cache, d_feat, empty, empty, grads);
  CHECK(grads.W5.cwiseAbs().maxCoeff() == 0.0);  // classifier untouched
  CHECK(grads.W4.cwiseAbs().maxCoeff() == 0.0);  // projection untouched
}

TEST_CASE("full-net gradients match central finite differences") {
  const NetDims dims{.h1 = 8, .h2 = 8, .feat = 6, .proj = 6, .classes = 3};
  Rng rng(8);
  const MatrixX<double> x = random_input(12, rng);

  // Fixed random sensitivities keep the check asymmetric.
  MatrixX<double> wf(12, 6), wz(12, 6), wl(12, 3);
  for (auto* m : {&wf, &wz}) {
    for (Index i = 0; i < m->rows(); ++i)
      for (Index j = 0; j < m->cols(); ++j) (*m)(i, j) = rng.normal();
  }
  for (Index i = 0; i < wl.rows(); ++i)
    for (Index j = 0; j < wl.cols(); ++j) wl(i, j) = rng.normal();

  auto loss_of = [&](const EmbeddingNet<double>& n) {
    ForwardCache<double> cache;
    forward(n, x, cache, true);
    return (cache.F.array() * wf.array()).sum() + (cache.Z.array() * wz.array()).sum() +
           (cache.logits.array() * wl.array()).sum();
  };

  EmbeddingNet<double> net = EmbeddingNet<double>::seeded(dims, 77);
  ForwardCache<double> cache;
  forward(net, x, cache, true);
  EmbeddingNet<double> grads = EmbeddingNet<double>::zeros(dims);
  backward(net, cache, wf, wz, wl, grads);

  const double h = 1e-6;
  double max_rel = 0.0;
  EmbeddingNet<double>* net_ptr = &net;
  EmbeddingNet<double>* grads_ptr = &grads;
  std::vector<double*> entries, grad_entries;
  for_each_entry(*net_ptr, [&](double& v) { entries.push_back(&v); });
  for_each_entry(*grads_ptr, [&](double& v) { grad_entries.push_back(&v); });
  REQUIRE(entries.size() == grad_entries.size());

  for (size_t p = 0; p < entries.size(); ++p) {
    const double save = *entries[p];
    *entries[p] = save + h;
    const double up = loss_of(net);
    *entries[p] = save - h;
    const double dn = loss_of(net);
    *entries[p] = save;
    const double fd = (up - dn) / (2 * h);
    const double rel = std::abs(*grad_entries[p] - fd) / (std::abs(fd) + 1e-8);
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("adam first step moves by about lr against a unit gradient") {
  MatrixX<double> p = MatrixX<double>::Zero(1, 1);
  MatrixX<double> g = MatrixX<double>::Ones(1, 1);
  MatrixX<double> m = MatrixX<double>::Zero(1, 1);
  MatrixX<double> v = MatrixX<double>::Zero(1, 1);
  adam_update(p, g, m, v, 1, 0.001, AdamConfig<double>{});
  CHECK(std::abs(p(0, 0) + 0.001) < 1e-9);
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
  const NetDims dims{.h1 = 4, .h2 = 4, .feat = 4, .proj = 4};
  auto net = EmbeddingNet<float>::seeded(dims, 3);
  const auto before = net;
  AdamState<float> state = AdamState<float>::like(net);
  adam_step(net, EmbeddingNet<float>::zeros(dims), state, 0.01f);
  CHECK(net.W1 == before.W1);
  CHECK(net.b3 == before.b3);
}

TEST_CASE("adam with a constant gradient moves monotonically against its sign") {
  MatrixX<double> p = MatrixX<double>::Zero(1, 1);
  MatrixX<double> g = MatrixX<double>::Constant(1, 1, 2.5);
  MatrixX<double> m = MatrixX<double>::Zero(1, 1);
  MatrixX<double> v = MatrixX<double>::Zero(1, 1);
  double prev = 0.0;
  for (long t = 1; t <= 5; ++t) {
    adam_update(p, g, m, v, t, 0.001, AdamConfig<double>{});
    CHECK(p(0, 0) < prev);
    prev = p(0, 0);
  }
}

TEST_CASE("adam rejects non-finite gradients") {
  const NetDims dims{.h1 = 4, .h2 = 4, .feat = 4, .proj = 4};
  auto net = EmbeddingNet<float>::seeded(dims, 3);
  auto grads = EmbeddingNet<float>::zeros(dims);
  grads.W2(1, 1) = std::numeric_limits<float>::quiet_NaN();
  AdamState<float> state = AdamState<float>::like(net);
  CHECK_THROWS_AS(adam_step(net, grads, state, 0.01f), std::runtime_error);
}
