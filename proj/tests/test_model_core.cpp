#include <doctest.h>

#include <cmath>

#include "fedchain/errors.hpp"
#include "fedchain/metrics.hpp"
#include "fedchain/rng.hpp"
#include "fedchain/tensor.hpp"

using namespace fedchain;

TEST_CASE("l2_norm known values") {
  CHECK(l2_norm(WeightTensor({3.0, 4.0}, {2})) == doctest::Approx(5.0));
  CHECK(l2_norm(WeightTensor({0.0, 0.0, 0.0}, {3})) == 0.0);
  // sqrt(4) evaluated directly
  CHECK(l2_norm(WeightTensor({1.0, 1.0, 1.0, 1.0}, {4})) == doctest::Approx(2.0));
}

TEST_CASE("l2_norm rejects empty tensors") {
  WeightTensor empty;
  CHECK_THROWS_AS(l2_norm(empty), InvalidArgument);
}

TEST_CASE("l2_norm absolute homogeneity") {
  RngStream rng(7101);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.next_below(20);
    std::vector<double> data(n);
    for (double& v : data) v = rng.next_gaussian();
    double k = rng.next_gaussian() * 3.0;
    WeightTensor w(data, {n});
    WeightTensor kw = scale(w, k);
    CHECK(l2_norm(kw) == doctest::Approx(std::abs(k) * l2_norm(w)).epsilon(1e-12));
  }
}

TEST_CASE("mae known values") {
  std::vector<double> a{1, 2, 3}, b{1, 2, 3}, c{1, 2, 4};
  CHECK(mae(a, b) == 0.0);
  CHECK(mae(a, c) == doctest::Approx(1.0 / 3.0));
  std::vector<double> y{0, 0}, f{-2, 2};
  CHECK(mae(y, f) == doctest::Approx(2.0));
}

TEST_CASE("mae argument validation") {
  std::vector<double> a{1, 2}, b{1};
  CHECK_THROWS_AS(mae(a, b), InvalidArgument);
  std::vector<double> e;
  CHECK_THROWS_AS(mae(e, e), InvalidArgument);
}

TEST_CASE("mae is symmetric in error sign") {
  RngStream rng(7102);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.next_below(16);
    std::vector<double> y(n), plus(n), minus(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.next_gaussian();
      double e = rng.next_gaussian();
      plus[i] = y[i] + e;
      minus[i] = y[i] - e;
    }
    CHECK(mae(y, plus) == doctest::Approx(mae(y, minus)).epsilon(1e-12));
  }
}

TEST_CASE("classification metrics hand cases") {
  SUBCASE("perfect classifier") {
    auto r = classification_metrics({1, 0, 1, 0});
    CHECK(r.precision.value() == 1.0);
    CHECK(r.sensitivity.value() == 1.0);
    CHECK(r.specificity.value() == 1.0);
    CHECK(r.accuracy.value() == 1.0);
  }
  SUBCASE("degenerate precision denominator") {
    auto r = classification_metrics({0, 0, 5, 5});
    CHECK(!r.precision.has_value());
    CHECK(r.sensitivity.value() == 0.0);
    CHECK(r.specificity.value() == 1.0);
    CHECK(r.accuracy.value() == 0.5);
  }
  SUBCASE("mixed counts") {
    auto r = classification_metrics({90, 10, 80, 20});
    CHECK(r.precision.value() == doctest::Approx(0.9));
    CHECK(r.sensitivity.value() == doctest::Approx(90.0 / 110.0));
    CHECK(r.specificity.value() == doctest::Approx(80.0 / 90.0));
    CHECK(r.accuracy.value() == doctest::Approx(0.85));
  }
}

TEST_CASE("classification metrics rejects all-zero counts") {
  CHECK_THROWS_AS(classification_metrics({0, 0, 0, 0}), InvalidArgument);
}

TEST_CASE("label swap exchanges sensitivity and specificity") {
  RngStream rng(7103);
  for (int trial = 0; trial < 30; ++trial) {
    ConfusionCounts c{rng.next_below(50), rng.next_below(50), rng.next_below(50),
                      rng.next_below(50)};
    if (c.total() == 0) continue;
    ConfusionCounts swapped{c.tn, c.fn, c.tp, c.fp};
    auto r = classification_metrics(c);
    auto rs = classification_metrics(swapped);
    CHECK(r.specificity.has_value() == rs.sensitivity.has_value());
    if (r.specificity) {
      CHECK(*r.specificity == doctest::Approx(*rs.sensitivity).epsilon(1e-15));
    }
    // accuracy is exactly (tp+tn)/total and invariant under the swap
    CHECK(r.accuracy.value() == rs.accuracy.value());
  }
}

TEST_CASE("metrics report serializes absent values as null") {
  auto r = classification_metrics({0, 0, 5, 5});
  auto j = r.to_json();
  CHECK(j.at("precision").is_null());
  CHECK(j.at("sensitivity").get<double>() == 0.0);
  CHECK(j.at("mae").is_null());
  auto back = MetricsReport::from_json(j);
  CHECK(!back.precision.has_value());
  CHECK(back.specificity.value() == 1.0);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(WeightTensor({1.0, 2.0}, {3}), InvalidArgument);
  CHECK_THROWS_AS(WeightTensor({1.0, std::nan("")}, {2}), InvalidArgument);
  CHECK_THROWS_AS(WeightTensor({1.0}, {0}), InvalidArgument);
  WeightTensor w({1, 2, 3, 4, 5, 6}, {2, 3});
  CHECK(w.size() == 6);
  CHECK_THROWS_AS(add(w, WeightTensor({1.0}, {1})), InvalidArgument);
}

TEST_CASE("rng streams are label-keyed and reproducible") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream root(42);
  RngStream c1 = root.derive("hospital/0");
  RngStream c2 = root.derive("hospital/1");
  CHECK(c1.next_u64() != c2.next_u64());

  // deriving is independent of parent draw position
  RngStream root2(42);
  root2.next_u64();
  CHECK(root2.derive("hospital/0").next_u64() == RngStream(42).derive("hospital/0").next_u64());
}

TEST_CASE("gaussian and laplace moments") {
  RngStream rng(99);
  const int n = 200000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    double x = rng.next_gaussian();
    sum += x;
    sum_sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sum_sq / n == doctest::Approx(1.0).epsilon(0.02));

  sum = sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    double x = rng.next_laplace();
    sum += x;
    sum_sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  // Var of unit Laplace is 2
  CHECK(sum_sq / n == doctest::Approx(2.0).epsilon(0.05));
}
