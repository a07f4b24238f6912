#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fedchain/errors.hpp"
#include "fedchain/feddp.hpp"
#include "fedchain/rng.hpp"

using namespace fedchain;
using namespace fedchain::feddp;

namespace {

WeightTensor make_tensor(std::vector<double> v) {
  std::size_t n = v.size();
  return WeightTensor(std::move(v), {n});
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("h" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("subsample basics") {
  RngStream rng(1);

  SUBCASE("sample equals population when m_t >= H") {
    auto x = subsample(ids(3), 3, rng);
    std::set<std::string> s(x.begin(), x.end());
    CHECK(s == std::set<std::string>{"h0", "h1", "h2"});
    auto y = subsample(ids(3), 10, rng);
    CHECK(y.size() == 3);
  }
  SUBCASE("single pick replays deterministically") {
    RngStream a(77), b(77);
    auto x = subsample(ids(5), 1, a);
    auto y = subsample(ids(5), 1, b);
    REQUIRE(x.size() == 1);
    CHECK(x == y);
  }
  SUBCASE("no duplicates") {
    RngStream r(3);
    for (int t = 0; t < 100; ++t) {
      auto x = subsample(ids(8), 5, r);
      std::set<std::string> s(x.begin(), x.end());
      CHECK(s.size() == x.size());
    }
  }
  SUBCASE("empty list throws") {
    std::vector<std::string> empty;
    CHECK_THROWS_AS(subsample(empty, 1, rng), InvalidArgument);
  }
}

TEST_CASE("subsample inclusion frequency matches the hypergeometric rate") {
  RngStream rng(2024);
  const int trials = 100000;
  std::map<std::string, int> hits;
  auto pool = ids(10);
  for (int t = 0; t < trials; ++t) {
    for (const auto& id : subsample(pool, 4, rng)) ++hits[id];
  }
  for (const auto& id : pool) {
    double freq = static_cast<double>(hits[id]) / trials;
    CHECK(freq == doctest::Approx(0.4).epsilon(0.05));  // 0.4 +- 0.02
  }
}

TEST_CASE("clip_update contract") {
  SUBCASE("inside the bound: bitwise unchanged") {
    auto w = make_tensor({0.3, -0.4});  // norm 0.5
    auto c = clip_update(w, 1.0);
    CHECK(c.data() == w.data());
  }
  SUBCASE("twice the bound: halved") {
    auto w = make_tensor({1.2, -1.6});  // norm 2.0
    auto c = clip_update(w, 1.0);
    CHECK(c.data()[0] == doctest::Approx(0.6));
    CHECK(c.data()[1] == doctest::Approx(-0.8));
    CHECK(l2_norm(c) == doctest::Approx(1.0));
  }
  SUBCASE("hand case [3,4] with S=1") {
    auto c = clip_update(make_tensor({3.0, 4.0}), 1.0);
    CHECK(c.data()[0] == doctest::Approx(0.6));
    CHECK(c.data()[1] == doctest::Approx(0.8));
  }
  SUBCASE("idempotence on random tensors") {
    RngStream rng(5);
    for (int t = 0; t < 100; ++t) {
      std::size_t n = 1 + rng.next_below(12);
      std::vector<double> v(n);
      for (double& x : v) x = rng.next_gaussian() * 3.0;
      auto once = clip_update(make_tensor(v), 1.5);
      auto twice = clip_update(once, 1.5);
      CHECK(once.data() == twice.data());
      CHECK(l2_norm(once) <= 1.5 * (1 + 1e-12));
    }
  }
  SUBCASE("direction preserved") {
    auto w = make_tensor({3.0, 4.0});
    auto c = clip_update(w, 2.0);
    CHECK(c.data()[0] / c.data()[1] == doctest::Approx(0.75));
  }
  SUBCASE("non-finite input rejected") {
    auto w = make_tensor({1.0, 2.0});
    w.data()[0] = std::nan("");
    CHECK_THROWS_AS(clip_update(w, 1.0), InvalidArgument);
  }
  SUBCASE("non-positive bound rejected") {
    CHECK_THROWS_AS(clip_update(make_tensor({1.0}), 0.0), InvalidArgument);
  }
}

TEST_CASE("dp_federated_round reduces to plain averaging when noiseless") {
  RngStream rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.next_below(10);
    std::size_t h = 1 + rng.next_below(5);
    std::vector<double> base(n);
    for (double& x : base) x = rng.next_gaussian();
    WeightTensor w_t = make_tensor(base);

    std::vector<ModelUpdate> updates;
    for (std::size_t k = 0; k < h; ++k) {
      std::vector<double> d(n);
      for (double& x : d) x = rng.next_gaussian();
      updates.push_back({"h" + std::to_string(k), make_tensor(d)});
    }

    FedConfig cfg;
    cfg.clip_bound = 1e12;  // never active
    cfg.noise_sigma = 0.0;
    cfg.subsample = h;

    RngStream noise_rng(0);
    auto next = dp_federated_round(w_t, updates, cfg, noise_rng);

    // independent plain-averaging oracle
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (const auto& u : updates) acc += u.delta.data()[i];
      double expect = w_t.data()[i] + acc / static_cast<double>(h);
      CHECK(std::abs(next.data()[i] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("dp_federated_round clips a single oversized update") {
  WeightTensor w_t = make_tensor({0.0, 0.0});
  std::vector<ModelUpdate> updates;
  updates.push_back({"h0", make_tensor({1.2, 1.6})});  // norm 2.0 = 2S
  FedConfig cfg;
  cfg.clip_bound = 1.0;
  cfg.noise_sigma = 0.0;
  cfg.subsample = 1;
  RngStream rng(0);
  auto next = dp_federated_round(w_t, updates, cfg, rng);
  CHECK(next.data()[0] == doctest::Approx(0.6));
  CHECK(next.data()[1] == doctest::Approx(0.8));
}

TEST_CASE("dp_federated_round noise variance tracks sigma^2 S^2 / m^2") {
  // Smaller companion to the acceptance run: 2000 trials, pooled variance.
  const std::size_t n = 8;
  WeightTensor w_t = WeightTensor::zeros({n});
  std::vector<ModelUpdate> updates;
  for (int k = 0; k < 4; ++k) {
    updates.push_back({"h" + std::to_string(k), WeightTensor::zeros({n})});
  }
  FedConfig cfg;
  cfg.clip_bound = 1.0;
  cfg.noise_sigma = 1.0;
  cfg.subsample = 4;

  RngStream rng(99);
  double sum_sq = 0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    auto next = dp_federated_round(w_t, updates, cfg, rng);
    for (double x : next.data()) sum_sq += x * x;
  }
  double var = sum_sq / (trials * n);
  CHECK(var == doctest::Approx(1.0 / 16.0).epsilon(0.05));
}

TEST_CASE("dp_federated_round noise scales linearly in S") {
  const std::size_t n = 16;
  WeightTensor w_t = WeightTensor::zeros({n});
  std::vector<ModelUpdate> updates;
  updates.push_back({"h0", WeightTensor::zeros({n})});

  FedConfig cfg;
  cfg.noise_sigma = 0.7;
  cfg.subsample = 1;

  cfg.clip_bound = 1.0;
  RngStream r1(31337);
  auto a = dp_federated_round(w_t, updates, cfg, r1);
  cfg.clip_bound = 2.0;
  RngStream r2(31337);
  auto b = dp_federated_round(w_t, updates, cfg, r2);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(b.data()[i] == 2.0 * a.data()[i]);  // exact: same draws, scaled
  }
}

TEST_CASE("dp_federated_round argument validation") {
  WeightTensor w_t = WeightTensor::zeros({4});
  FedConfig cfg;
  RngStream rng(0);
  std::vector<ModelUpdate> empty;
  CHECK_THROWS_AS(dp_federated_round(w_t, empty, cfg, rng), InvalidArgument);
  std::vector<ModelUpdate> bad;
  bad.push_back({"h0", WeightTensor::zeros({3})});
  CHECK_THROWS_AS(dp_federated_round(w_t, bad, cfg, rng), InvalidArgument);
}

TEST_CASE("update_stats hand case and degenerate cases") {
  SUBCASE("worked example") {
    std::vector<WeightTensor> updates{make_tensor({1.0, 3.0}), make_tensor({3.0, 5.0})};
    auto s = update_stats(updates);
    CHECK(s.var_matrix.data()[0] == 1.0);
    CHECK(s.var_matrix.data()[1] == 1.0);
    CHECK(s.vc == 1.0);
    CHECK(s.us == 10.0);  // (2^2 + 4^2) / 2
  }
  SUBCASE("identical updates have zero spread") {
    std::vector<WeightTensor> updates{make_tensor({2.0, -1.0}), make_tensor({2.0, -1.0}),
                                      make_tensor({2.0, -1.0})};
    auto s = update_stats(updates);
    CHECK(s.vc == 0.0);
    for (double v : s.var_matrix.data()) CHECK(v == 0.0);
    CHECK(s.us == doctest::Approx((4.0 + 1.0) / 2.0));
  }
  SUBCASE("single hospital") {
    std::vector<WeightTensor> updates{make_tensor({3.0, 4.0})};
    auto s = update_stats(updates);
    CHECK(s.vc == 0.0);
    CHECK(s.us == doctest::Approx((9.0 + 16.0) / 2.0));
  }
  SUBCASE("shape mismatch") {
    std::vector<WeightTensor> updates{make_tensor({1.0}), make_tensor({1.0, 2.0})};
    CHECK_THROWS_AS(update_stats(updates), InvalidArgument);
  }
}

TEST_CASE("update_stats agrees with a brute-force oracle") {
  RngStream rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.next_below(10);
    std::size_t h = 1 + rng.next_below(6);
    std::vector<WeightTensor> updates;
    for (std::size_t k = 0; k < h; ++k) {
      std::vector<double> v(n);
      for (double& x : v) x = rng.next_gaussian() * 2.0;
      updates.push_back(make_tensor(v));
    }

    auto s = update_stats(updates);

    // oracle: straightforward loops over the mean/variance definitions
    double vc = 0, us = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double mu = 0;
      for (const auto& u : updates) mu += u.data()[i];
      mu /= static_cast<double>(h);
      double var = 0;
      for (const auto& u : updates) {
        var += (u.data()[i] - mu) * (u.data()[i] - mu);
      }
      var /= static_cast<double>(h);
      CHECK(std::abs(s.var_matrix.data()[i] - var) <= 1e-12);
      vc += var;
      us += mu * mu;
    }
    CHECK(std::abs(s.vc - vc / n) <= 1e-12);
    CHECK(std::abs(s.us - us / n) <= 1e-12);
  }
}

TEST_CASE("update_stats invariant under hospital permutation") {
  RngStream rng(9);
  std::vector<WeightTensor> updates;
  for (int k = 0; k < 5; ++k) {
    std::vector<double> v(6);
    for (double& x : v) x = rng.next_gaussian();
    updates.push_back(make_tensor(v));
  }
  auto s1 = update_stats(updates);
  std::reverse(updates.begin(), updates.end());
  auto s2 = update_stats(updates);
  CHECK(s1.vc == doctest::Approx(s2.vc).epsilon(1e-14));
  CHECK(s1.us == doctest::Approx(s2.us).epsilon(1e-14));
}

TEST_CASE("laplace_perturb") {
  SUBCASE("zero sensitivity is the identity") {
    auto m = make_tensor({1.0, -2.0, 3.0});
    RngStream rng(1);
    auto out = laplace_perturb(m, 0.0, 1.0, rng);
    CHECK(out.data() == m.data());
  }
  SUBCASE("enormous epsilon adds vanishing noise") {
    auto m = WeightTensor::zeros({1000});
    RngStream rng(2);
    auto out = laplace_perturb(m, 1.0, 1e9, rng);
    double max_abs = 0;
    for (double x : out.data()) max_abs = std::max(max_abs, std::abs(x));
    CHECK(max_abs < 1e-6);
  }
  SUBCASE("empirical variance approx 2 (s/eps)^2") {
    auto m = WeightTensor::zeros({100000});
    RngStream rng(3);
    auto out = laplace_perturb(m, 1.0, 1.0, rng);
    double sum_sq = 0;
    for (double x : out.data()) sum_sq += x * x;
    double var = sum_sq / static_cast<double>(out.size());
    CHECK(var == doctest::Approx(2.0).epsilon(0.05));
  }
  SUBCASE("epsilon must be positive") {
    auto m = make_tensor({1.0});
    RngStream rng(4);
    CHECK_THROWS_AS(laplace_perturb(m, 1.0, 0.0, rng), InvalidArgument);
    CHECK_THROWS_AS(laplace_perturb(m, -1.0, 1.0, rng), InvalidArgument);
  }
}

TEST_CASE("sensitivity_bound") {
  CHECK(sensitivity_bound(make_tensor({1.0, 2.0}), make_tensor({1.0, 2.0})) == 0.0);
  CHECK(sensitivity_bound(make_tensor({1.0, 2.0}), make_tensor({2.0, 0.0})) == 3.0);
  CHECK_THROWS_AS(sensitivity_bound(make_tensor({1.0}), make_tensor({1.0, 2.0})),
                  InvalidArgument);
}

TEST_CASE("counting query over a toy record set has sensitivity 1") {
  // 5 binary records; f(D) = count of ones. Neighbors differ in one record.
  std::vector<int> records{1, 0, 1, 1, 0};
  auto count_of = [](const std::vector<int>& d) {
    double c = 0;
    for (int r : d) c += r;
    return make_tensor({c});
  };

  std::vector<std::pair<WeightTensor, WeightTensor>> neighbor_outputs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto flipped = records;
    flipped[i] = 1 - flipped[i];
    neighbor_outputs.emplace_back(count_of(records), count_of(flipped));
  }
  CHECK(max_sensitivity(neighbor_outputs) == 1.0);
}

TEST_CASE("dp_ratio_check accepts the Laplace mechanism and rejects determinism") {
  Mechanism laplace_count = [](double input, RngStream& rng) {
    return input + rng.next_laplace();  // scale s/eps = 1
  };
  Mechanism deterministic = [](double input, RngStream&) { return input; };

  RngStream rng(2025);

  SUBCASE("laplace holds at eps=1") {
    auto report = dp_ratio_check(laplace_count, 10.0, 11.0, 1.0, 20, 30000, rng);
    CHECK(report.holds);
    CHECK(report.max_ratio <= std::exp(1.0) * 1.15);
    CHECK(report.max_ratio > 1.0);  // neighboring inputs do differ
  }
  SUBCASE("huge epsilon trivially holds") {
    auto report = dp_ratio_check(laplace_count, 10.0, 11.0, 1e9, 20, 10000, rng);
    CHECK(report.holds);
  }
  SUBCASE("deterministic mechanism fails") {
    auto report = dp_ratio_check(deterministic, 10.0, 11.0, 1.0, 20, 10000, rng);
    CHECK(!report.holds);
    CHECK(std::isinf(report.max_ratio));
  }
  SUBCASE("zero trials rejected") {
    CHECK_THROWS_AS(dp_ratio_check(laplace_count, 0.0, 1.0, 1.0, 20, 0, rng),
                    InvalidArgument);
  }
}

TEST_CASE("FedConfig validation") {
  FedConfig cfg;
  cfg.clip_bound = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = FedConfig{};
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = FedConfig{};
  cfg.subsample = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
