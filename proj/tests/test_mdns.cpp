#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rfseg/mdns.hpp"
#include "rfseg/rng.hpp"

using namespace rfseg;

namespace {

MatrixX<double> unit_rows(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixX<double> m(static_cast<Index>(rows.size()),
                    static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

/// One shot whose foreground occupies a small random blob around `center`
/// with constant features.
ShotForeground<double> blob_shot(const Eigen::Vector3f& center, const VectorX<double>& feature,
                                 Index n, Rng& rng) {
  ShotForeground<double> s;
  s.coords.resize(n, 3);
  s.features.resize(n, feature.size());
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a)
      s.coords(i, a) = center(a) + static_cast<float>(rng.uniform(-0.1, 0.1));
    s.features.row(i) = feature.transpose();
  }
  return s;
}

}  // namespace

TEST_CASE("similarity graph hand fixtures") {
  const MatrixX<double> x = unit_rows({{1, 0}, {1, 0}, {0, 1}});
  const MatrixX<double> w = build_similarity_graph(x, 3.0);
  CHECK(w(0, 1) == doctest::Approx(1.0));
  CHECK(w(0, 2) == doctest::Approx(0.0));
  CHECK(w(1, 2) == doctest::Approx(0.0));
  CHECK(w.diagonal().cwiseAbs().maxCoeff() == 0.0);

  const MatrixX<double> y = unit_rows({{1, 0}, {1, 0}, {0.6, 0.8}});
  CHECK(build_similarity_graph(y, 3.0)(0, 2) == doctest::Approx(0.216).epsilon(1e-12));
  CHECK(build_similarity_graph(y, 1.0)(0, 2) == doctest::Approx(0.6).epsilon(1e-12));

  const MatrixX<double> single = MatrixX<double>::Ones(1, 4);
  const MatrixX<double> w1 = build_similarity_graph(single, 2.0);
  CHECK(w1.rows() == 1);
  CHECK(w1(0, 0) == 0.0);
}

TEST_CASE("graph symmetry, zero diagonal and non-negativity on random input") {
  Rng rng(19);
  MatrixX<double> x(7, 5);
  for (Index i = 0; i < 7; ++i) {
    for (Index j = 0; j < 5; ++j) x(i, j) = rng.normal();
    x.row(i).normalize();
  }
  for (double gamma : {1.0, 2.0, 3.0}) {
    const MatrixX<double> w = build_similarity_graph(x, gamma);
    CHECK((w - w.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(w.minCoeff() >= 0.0);
    CHECK(w.maxCoeff() <= 1.0 + 1e-12);
    CHECK(w.diagonal().cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("degrees fixtures") {
  const MatrixX<double> x = unit_rows({{1, 0}, {1, 0}, {0, 1}});
  const VectorX<double> d3 = degrees(build_similarity_graph(x, 3.0));
  CHECK(d3(0) == doctest::Approx(1.0));
  CHECK(d3(1) == doctest::Approx(1.0));
  CHECK(d3(2) == doctest::Approx(0.0));

  const MatrixX<double> y = unit_rows({{1, 0}, {1, 0}, {0.6, 0.8}});
  const VectorX<double> d1 = degrees(build_similarity_graph(y, 1.0));
  CHECK(d1(0) == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(d1(1) == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(d1(2) == doctest::Approx(1.2).epsilon(1e-12));

  const MatrixX<double> single = MatrixX<double>::Ones(1, 2);
  CHECK(degrees(build_similarity_graph(single, 1.0))(0) == 0.0);
}

TEST_CASE("clean indicator thresholds strictly at the mean") {
  VectorX<double> d(3);
  d << 1, 1, 0;
  CHECK(clean_indicator(d) == std::vector<int>{1, 1, 0});

  d << 1.6, 1.6, 1.2;
  CHECK(clean_indicator(d) == std::vector<int>{1, 1, 0});

  const VectorX<double> equal = VectorX<double>::Constant(4, 2.0);
  CHECK(clean_indicator(equal) == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("indicator is invariant to uniform degree scaling") {
  Rng rng(21);
  VectorX<double> d(6);
  for (Index i = 0; i < 6; ++i) d(i) = rng.uniform();
  CHECK(clean_indicator(d) == clean_indicator(VectorX<double>(17.0 * d)));
}

TEST_CASE("majority vote ties go clean") {
  CHECK(detail::majority_clean({1, 1, 0, 0}) == 1);
  CHECK(detail::majority_clean({1, 0}) == 1);
  CHECK(detail::majority_clean({0, 0, 1}) == 0);
  CHECK(detail::majority_clean({1}) == 1);
}

TEST_CASE("mdns filter keeps the clean cluster in the 3+2 hand case") {
  Rng rng(23);
  VectorX<double> u = VectorX<double>::Zero(8);
  u(0) = 1;
  VectorX<double> n1 = VectorX<double>::Zero(8);
  n1(1) = 1;
  VectorX<double> n2 = VectorX<double>::Zero(8);
  n2(2) = 1;

  std::vector<ShotForeground<double>> shots;
  for (int i = 0; i < 3; ++i) shots.push_back(blob_shot({0.5f, 0.5f, 0.1f}, u, 30, rng));
  shots.push_back(blob_shot({0.3f, 0.7f, 0.1f}, n1, 30, rng));
  shots.push_back(blob_shot({0.7f, 0.3f, 0.1f}, n2, 30, rng));

  MdnsConfig cfg;
  cfg.scales = {{1, 1, 1}};
  cfg.gammas = {3.0};
  const FilterResult r = mdns_filter(shots, cfg);
  CHECK(r.retained == std::vector<int>{0, 1, 2});
  CHECK(r.final_indicators == std::vector<int>{1, 1, 1, 0, 0});
  CHECK_FALSE(r.fallback_used);
}

TEST_CASE("single coarse scale reduces to the indicator on shot means") {
  Rng rng(29);
  std::vector<ShotForeground<double>> shots;
  MatrixX<double> means(4, 6);
  for (int s = 0; s < 4; ++s) {
    VectorX<double> f(6);
    for (Index j = 0; j < 6; ++j) f(j) = rng.normal();
    f.normalize();
    means.row(s) = f.transpose();
    shots.push_back(blob_shot({0.5f, 0.5f, 0.1f}, f, 10, rng));
  }
  MdnsConfig cfg;
  cfg.scales = {{1, 1, 1}};
  cfg.gammas = {3.0};
  const FilterResult r = mdns_filter(shots, cfg);
  const auto expected = clean_indicator(degrees(build_similarity_graph(means, 3.0)));
  for (int s = 0; s < 4; ++s) CHECK(r.scale_indicators[0][static_cast<size_t>(s)] == expected[static_cast<size_t>(s)]);
}

TEST_CASE("permuting shots permutes the indicators") {
  Rng rng(31);
  std::vector<ShotForeground<double>> shots;
  for (int s = 0; s < 5; ++s) {
    VectorX<double> f(4);
    for (Index j = 0; j < 4; ++j) f(j) = rng.normal();
    f.normalize();
    shots.push_back(blob_shot({0.5f, 0.5f, 0.1f}, f, 12 + 3 * s, rng));
  }
  MdnsConfig cfg;  // default two scales
  const FilterResult a = mdns_filter(shots, cfg);

  std::vector<ShotForeground<double>> rotated(shots.begin() + 2, shots.end());
  rotated.insert(rotated.end(), shots.begin(), shots.begin() + 2);
  const FilterResult b = mdns_filter(rotated, cfg);
  for (int s = 0; s < 5; ++s)
    CHECK(b.final_indicators[static_cast<size_t>(s)] ==
          a.final_indicators[static_cast<size_t>((s + 2) % 5)]);
}

TEST_CASE("fallback keeps the max-degree shots when everything votes noisy") {
  Rng rng(37);
  VectorX<double> f = VectorX<double>::Zero(4);
  f(0) = 1;
  // identical shots: all degrees equal, strict threshold empties the set
  std::vector<ShotForeground<double>> shots;
  for (int s = 0; s < 4; ++s) shots.push_back(blob_shot({0.5f, 0.5f, 0.1f}, f, 10, rng));
  MdnsConfig cfg;
  cfg.scales = {{1, 1, 1}};
  cfg.gammas = {3.0};
  const FilterResult r = mdns_filter(shots, cfg);
  CHECK(r.fallback_used);
  CHECK(r.retained == std::vector<int>{0, 1, 2, 3});
  CHECK(r.final_indicators == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("mdns filter rejects an empty way") {
  std::vector<ShotForeground<double>> shots;
  CHECK_THROWS_AS(mdns_filter(shots, MdnsConfig{}), std::invalid_argument);
}
