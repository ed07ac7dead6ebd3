#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rfseg/losses.hpp"
#include "rfseg/rng.hpp"

using namespace rfseg;

namespace {

MatrixX<double> random_unit_rows(Index n, Index d, Rng& rng) {
  MatrixX<double> z(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) z(i, j) = rng.normal();
    z.row(i).normalize();
  }
  return z;
}

// Eq.-1 hand case: two coincident anchors of one class against one
// orthogonal outlier, tau = 1.
const double kThreeShotCns = 2.0 * std::log(1.0 + std::exp(-1.0)) / 3.0;

}  // namespace

TEST_CASE("cross entropy fixtures") {
  MatrixX<double> uniform = MatrixX<double>::Zero(1, 3);
  Eigen::VectorXi label0(1);
  label0 << 0;
  CHECK(cross_entropy(uniform, label0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  MatrixX<double> two(1, 2);
  two << 1, 0;
  CHECK(cross_entropy(two, label0) ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

  // a large one-hot margin drives the loss to zero
  MatrixX<double> margin(1, 2);
  margin << 40, 0;
  CHECK(cross_entropy(margin, label0) < 1e-12);

  Eigen::VectorXi bad(1);
  bad << 5;
  CHECK_THROWS_AS(cross_entropy(two, bad), std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(17);
  MatrixX<double> logits(6, 4);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 4; ++j) logits(i, j) = rng.normal();
  Eigen::VectorXi labels(6);
  for (Index i = 0; i < 6; ++i) labels(i) = rng.uniform_int(0, 3);

  MatrixX<double> grad;
  cross_entropy(logits, labels, &grad);
  const double h = 1e-6;
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 4; ++j) {
      MatrixX<double> up = logits, dn = logits;
      up(i, j) += h;
      dn(i, j) -= h;
      const double fd = (cross_entropy(up, labels) - cross_entropy(dn, labels)) / (2 * h);
      CHECK(std::abs(grad(i, j) - fd) < 1e-8);
    }
}

TEST_CASE("cns loss: coincident same-class pair is zero for any tau") {
  MatrixX<double> z(2, 2);
  z << 1, 0, 1, 0;
  for (double tau : {0.05, 0.1, 1.0}) {
    CHECK(cns_loss(z, {4, 4}, tau) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("cns loss: 3-shot hand value") {
  MatrixX<double> z(3, 2);
  z << 1, 0, 1, 0, 0, 1;
  CHECK(cns_loss(z, {0, 0, 1}, 1.0) == doctest::Approx(kThreeShotCns).epsilon(1e-12));
}

TEST_CASE("cns loss: identical same-class shots give log(K-1)") {
  // Direct consequence of the objective: each anchor sees K-1 equal
  // positives covering the whole denominator.
  for (int k : {2, 3, 5}) {
    MatrixX<double> z = MatrixX<double>::Zero(k, 3);
    z.col(0).setOnes();
    const std::vector<int> labels(static_cast<size_t>(k), 7);
    CHECK(cns_loss(z, labels, 0.1) == doctest::Approx(std::log(k - 1.0)).epsilon(1e-9));
  }
}

TEST_CASE("cns loss requires at least two shots") {
  const MatrixX<double> z = MatrixX<double>::Ones(1, 2);
  CHECK_THROWS_AS(cns_loss(z, {0}, 1.0), std::invalid_argument);
}

TEST_CASE("cns loss stays finite on unit inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const Index k = 2 + rng.uniform_int(0, 6);
    const MatrixX<double> z = random_unit_rows(k, 8, rng);
    std::vector<int> labels(static_cast<size_t>(k));
    for (auto& l : labels) l = rng.uniform_int(0, 2);
    const double tau = 0.05 + rng.uniform() * 0.5;
    CHECK(std::isfinite(cns_loss(z, labels, tau)));
  }
}

TEST_CASE("cns loss decreases as same-class similarity grows, cross fixed") {
  // Anchor pair of class A at angle theta, one class-B outlier orthogonal
  // to both; shrinking theta must shrink the loss.
  double prev = std::numeric_limits<double>::max();
  for (double theta : {1.2, 0.9, 0.6, 0.3, 0.1}) {
    MatrixX<double> z(3, 3);
    z.row(0) << std::cos(theta / 2), std::sin(theta / 2), 0;
    z.row(1) << std::cos(theta / 2), -std::sin(theta / 2), 0;
    z.row(2) << 0, 0, 1;
    const double loss = cns_loss(z, {0, 0, 1}, 0.1);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("per-anchor softmax ranking is invariant to tau") {
  Rng rng(29);
  const MatrixX<double> z = random_unit_rows(5, 6, rng);
  const MatrixX<double> sim = z * z.transpose();
  for (Index k = 0; k < 5; ++k) {
    std::vector<double> s;
    for (Index h = 0; h < 5; ++h)
      if (h != k) s.push_back(sim(k, h));
    // softmax(s / tau) is monotone in s for every tau > 0, so the induced
    // ranking of the denominator terms cannot change
    std::vector<size_t> rank_a(s.size()), rank_b(s.size());
    auto ranking = [&](double tau) {
      std::vector<size_t> idx(s.size());
      std::iota(idx.begin(), idx.end(), 0u);
      std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return std::exp(s[a] / tau) > std::exp(s[b] / tau);
      });
      return idx;
    };
    rank_a = ranking(0.07);
    rank_b = ranking(0.9);
    CHECK(rank_a == rank_b);
  }
}

TEST_CASE("supervised contrastive gradient matches finite differences") {
  Rng rng(31);
  MatrixX<double> z = random_unit_rows(6, 5, rng);
  const std::vector<int> labels = {0, 0, 1, 1, 2, 0};
  MatrixX<double> grad;
  supervised_contrastive(z, labels, 0.2, &grad);

  const double h = 1e-6;
  for (Index i = 0; i < z.rows(); ++i)
    for (Index j = 0; j < z.cols(); ++j) {
      MatrixX<double> up = z, dn = z;
      up(i, j) += h;
      dn(i, j) -= h;
      const double fd =
          (supervised_contrastive(up, labels, 0.2) - supervised_contrastive(dn, labels, 0.2)) /
          (2 * h);
      CHECK(std::abs(grad(i, j) - fd) < 1e-7);
    }
}

TEST_CASE("ccns with R=1 equals cns on normalized shot means") {
  Rng rng(37);
  for (int trial = 0; trial < 25; ++trial) {
    const int k = 2 + rng.uniform_int(0, 3);
    std::vector<MatrixX<double>> rows(static_cast<size_t>(k));
    std::vector<int> labels(static_cast<size_t>(k));
    MatrixX<double> means(k, 6);
    for (int s = 0; s < k; ++s) {
      const Index n = 1 + rng.uniform_int(0, 7);
      rows[static_cast<size_t>(s)] = random_unit_rows(n, 6, rng);
      labels[static_cast<size_t>(s)] = rng.uniform_int(0, 2);
      VectorX<double> mean = rows[static_cast<size_t>(s)].colwise().mean();
      means.row(s) = (mean / mean.norm()).transpose();
    }
    const double tau = 0.1 + rng.uniform() * 0.4;
    CHECK(std::abs(ccns_loss(rows, labels, 1, tau) - cns_loss(means, labels, tau)) < 1e-10);
  }
}

TEST_CASE("ccns hand fixtures") {
  // Two single-row shots of one class, coincident: R' = 1 each, loss 0.
  std::vector<MatrixX<double>> same(2);
  same[0] = MatrixX<double>::Zero(1, 2);
  same[0] << 1, 0;
  same[1] = same[0];
  CHECK(ccns_loss(same, {3, 3}, 4, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

  // Matches the 3-shot CNS case when every shot is one point and R = 1.
  std::vector<MatrixX<double>> three(3);
  three[0] = same[0];
  three[1] = same[0];
  three[2] = MatrixX<double>::Zero(1, 2);
  three[2] << 0, 1;
  CHECK(ccns_loss(three, {0, 0, 1}, 1, 1.0) == doctest::Approx(kThreeShotCns).epsilon(1e-12));
}

TEST_CASE("ccns rejects a single shot") {
  std::vector<MatrixX<double>> one(1, MatrixX<double>::Ones(3, 2));
  CHECK_THROWS_AS(ccns_loss(one, {0}, 2, 1.0), std::invalid_argument);
}

TEST_CASE("ccns row gradients match finite differences under a frozen plan") {
  Rng rng(41);
  std::vector<MatrixX<double>> rows(3);
  rows[0] = random_unit_rows(7, 5, rng);
  rows[1] = random_unit_rows(4, 5, rng);
  rows[2] = random_unit_rows(9, 5, rng);
  const std::vector<int> labels = {0, 1, 0};

  ComponentPlan plan;
  std::vector<MatrixX<double>> grads;
  ccns_loss(rows, labels, 3, 0.15, &grads, nullptr, &plan);

  const double h = 1e-6;
  for (size_t s = 0; s < rows.size(); ++s)
    for (Index i = 0; i < rows[s].rows(); ++i)
      for (Index j = 0; j < rows[s].cols(); ++j) {
        auto up = rows, dn = rows;
        up[s](i, j) += h;
        dn[s](i, j) -= h;
        const double fd =
            (ccns_loss<double>(up, labels, 3, 0.15, nullptr, &plan) -
             ccns_loss<double>(dn, labels, 3, 0.15, nullptr, &plan)) /
            (2 * h);
        CHECK(std::abs(grads[s](i, j) - fd) < 1e-7);
      }
}

TEST_CASE("combined loss fixtures") {
  CHECK(combined_loss(1.0, 0.5, 0.1) == doctest::Approx(1.05).epsilon(1e-12));
  CHECK(combined_loss(0.7, 123.0, 0.0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(combined_loss(std::log(3.0), kThreeShotCns, 0.1) ==
        doctest::Approx(std::log(3.0) + 0.1 * kThreeShotCns).epsilon(1e-12));
  // composes to the value quoted with five digits
  CHECK(std::log(3.0) + 0.1 * kThreeShotCns == doctest::Approx(1.11949).epsilon(1e-5));
}

TEST_CASE("empty positive sets contribute zero") {
  // Three distinct classes: every anchor has no positives.
  MatrixX<double> z(3, 2);
  z << 1, 0, 0, 1, -1, 0;
  CHECK(cns_loss(z, {0, 1, 2}, 0.3) == doctest::Approx(0.0).epsilon(1e-12));
}
