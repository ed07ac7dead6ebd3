#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rfseg/fewshot.hpp"
#include "rfseg/rng.hpp"

using namespace rfseg;

namespace {

MatrixX<double> random_nodes(Index n, Index d, Rng& rng) {
  MatrixX<double> x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

MatrixX<double> two_blobs(Index per_blob, double sep, Rng& rng, std::vector<int>* truth) {
  MatrixX<double> x(2 * per_blob, 4);
  for (Index i = 0; i < 2 * per_blob; ++i) {
    const bool second = i >= per_blob;
    for (Index j = 0; j < 4; ++j) x(i, j) = 0.05 * rng.normal();
    x(i, 0) += second ? sep : 0.0;
    if (truth) truth->push_back(second ? 0 : 1);
  }
  return x;
}

}  // namespace

TEST_CASE("multi prototypes on separated blobs are pure and partition the pool") {
  Rng rng(3);
  std::vector<int> truth;
  const MatrixX<double> x = two_blobs(40, 5.0, rng, &truth);
  const auto protos = multi_prototype_generation(x, truth, 1, 4);
  REQUIRE(!protos.empty());

  std::vector<int> seen(static_cast<size_t>(x.rows()), 0);
  for (const auto& p : protos) {
    CHECK((p.purity == doctest::Approx(1.0) || p.purity == doctest::Approx(0.0)));
    for (Index m : p.members) ++seen[static_cast<size_t>(m)];
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("fully clean pools give purity one everywhere") {
  Rng rng(5);
  const MatrixX<double> x = random_nodes(30, 4, rng);
  const std::vector<int> truth(30, 2);
  for (const auto& p : multi_prototype_generation(x, truth, 2, 6)) {
    CHECK(p.purity == doctest::Approx(1.0));
  }
}

TEST_CASE("identical points collapse to a single prototype equal to the point") {
  MatrixX<double> x = MatrixX<double>::Constant(12, 3, 0.7);
  const std::vector<int> truth(12, 1);
  const auto protos = multi_prototype_generation(x, truth, 1, 5);
  // nearest-seed ties all resolve to the first component; the empties drop
  REQUIRE(protos.size() == 1);
  CHECK((protos[0].vec - VectorX<double>::Constant(3, 0.7)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(protos[0].purity == doctest::Approx(1.0));
  CHECK(protos[0].members.size() == 12);
}

TEST_CASE("global prototype purity is exactly the clean fraction") {
  Rng rng(7);
  std::vector<int> truth;
  MatrixX<double> x(10, 2);
  for (Index i = 0; i < 10; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    truth.push_back(i < 6 ? 3 : 9);
  }
  const auto p = global_prototype(x, truth, 3);
  CHECK(p.purity == doctest::Approx(0.6));

  MatrixX<double> blobs(2, 2);
  blobs << 1, 0, 0, 1;
  const auto q = global_prototype(blobs, {1, 1}, 1);
  CHECK(q.vec(0) == doctest::Approx(0.5));
  CHECK(q.vec(1) == doctest::Approx(0.5));

  MatrixX<double> single(1, 2);
  single << 2, 3;
  CHECK(global_prototype(single, {4}, 4).purity == doctest::Approx(1.0));
  CHECK(global_prototype(single, {5}, 4).purity == doctest::Approx(0.0));
}

TEST_CASE("knn graph fixtures") {
  MatrixX<double> same(2, 3);
  same << 1, 2, 3, 1, 2, 3;
  const MatrixX<double> a = build_knn_graph(same, 1);
  CHECK(a(0, 1) == doctest::Approx(1.0));
  CHECK(a(1, 0) == doctest::Approx(1.0));
  CHECK(a(0, 0) == 0.0);

  // explicit sigma^2 = 1 and squared distance 2 gives weight e^-1
  MatrixX<double> pair(2, 2);
  pair << 0, 0, std::sqrt(2.0), 0;
  const MatrixX<double> b = build_knn_graph(pair, 1, 1.0);
  CHECK(b(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  Rng rng(11);
  const MatrixX<double> x = random_nodes(6, 3, rng);
  const MatrixX<double> full = build_knn_graph(x, 99);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) CHECK((full(i, j) > 0.0) == (i != j));
}

TEST_CASE("knn graph is symmetric") {
  Rng rng(13);
  const MatrixX<double> x = random_nodes(25, 4, rng);
  const MatrixX<double> a = build_knn_graph(x, 4);
  CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("label propagation fixtures") {
  MatrixX<double> a(2, 2);
  a << 0, 1, 1, 0;
  MatrixX<double> y(2, 1);
  y << 1, 0;
  const MatrixX<double> f = label_propagate(a, y, 0.5);
  CHECK(f(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(f(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK((label_propagate(a, y, 0.0) - y).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(label_propagate(a, y, 1.0), std::invalid_argument);
}

TEST_CASE("disconnected nodes keep their seed row") {
  MatrixX<double> a = MatrixX<double>::Zero(3, 3);
  a(0, 1) = a(1, 0) = 1.0;
  MatrixX<double> y(3, 2);
  y << 1, 0, 0, 0, 0, 1;
  const MatrixX<double> f = label_propagate(a, y, 0.8);
  CHECK(f(2, 0) == doctest::Approx(0.0));
  CHECK(f(2, 1) == doctest::Approx(1.0));
}

TEST_CASE("closed-form and iterative propagation agree") {
  Rng rng(17);
  for (double alpha : {0.5, 0.9, 0.99}) {
    const Index n = 20 + rng.uniform_int(0, 40);
    const MatrixX<double> x = random_nodes(n, 3, rng);
    const MatrixX<double> a = build_knn_graph(x, 5);
    MatrixX<double> y = MatrixX<double>::Zero(n, 3);
    for (Index i = 0; i < 5; ++i) y(i, rng.uniform_int(0, 2)) = 1.0;
    const MatrixX<double> closed = label_propagate(a, y, alpha);
    const MatrixX<double> iter = label_propagate_iterative(a, y, alpha, 1e-14);
    CHECK((closed - iter).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("propagated scores stay non-negative for non-negative seeds") {
  Rng rng(19);
  const MatrixX<double> x = random_nodes(30, 3, rng);
  const MatrixX<double> a = build_knn_graph(x, 6);
  MatrixX<double> y = MatrixX<double>::Zero(30, 2);
  y(0, 0) = y(1, 1) = y(2, 1) = 1.0;
  const MatrixX<double> f = label_propagate(a, y, 0.95);
  CHECK(f.minCoeff() >= -1e-12);
}

TEST_CASE("label prediction fixtures") {
  MatrixX<double> scores(3, 3);
  scores << 0, 0, 1,   // clear winner: class 2
      0, 0, 0,         // all zero: background by tie rule
      0.2, 0.8, 0.1;   // clear winner: class 1
  const Eigen::VectorXi labels = predict_labels(scores);
  CHECK(labels(0) == 2);
  CHECK(labels(1) == 0);
  CHECK(labels(2) == 1);

  // argmax is invariant to positive row scaling
  const Eigen::VectorXi scaled = predict_labels<double>(3.7 * scores);
  CHECK(labels == scaled);

  // 2-node propagation example: the query row scores 2/3 for the seeded
  // class and 0 elsewhere
  MatrixX<double> a(2, 2);
  a << 0, 1, 1, 0;
  MatrixX<double> y(2, 2);
  y << 0, 1, 0, 0;
  const MatrixX<double> f = label_propagate(a, y, 0.5);
  const Eigen::VectorXi q = predict_query(f, 1);
  CHECK(q.size() == 1);
  CHECK(q(0) == 1);
}

TEST_CASE("protonet prediction fixtures") {
  std::vector<Prototype<double>> protos(2);
  protos[0].class_id = 0;
  protos[0].vec = VectorX<double>::Zero(2);
  protos[1].class_id = 1;
  protos[1].vec = VectorX<double>::Constant(2, 1.0);

  MatrixX<double> queries(3, 2);
  queries << 0.9, 0.9,   // near class 1
      0, 0,              // exactly on background
      0.5, 0.5;          // equidistant: lower class id
  const Eigen::VectorXi labels = protonet_predict(protos, queries);
  CHECK(labels(0) == 1);
  CHECK(labels(1) == 0);
  CHECK(labels(2) == 0);
}
