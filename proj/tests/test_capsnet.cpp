#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "fedchain/capsnet.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/rng.hpp"

using namespace fedchain;
using namespace fedchain::capsnet;

namespace {

// ---------------------------------------------------------------------------
// Independent oracle for the routing algorithm: plain nested vectors, naive
// softmax and squash, executed step by step.
// ---------------------------------------------------------------------------

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec oracle_squash(const Vec& a) {
  double n2 = 0;
  for (double x : a) n2 += x * x;
  if (n2 == 0) return Vec(a.size(), 0.0);
  double n = std::sqrt(n2);
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (n2 / (1 + n2)) * (a[i] / n);
  return out;
}

struct OracleResult {
  Mat v;  // n_out x d
  Mat c;  // n_in x n_out
};

OracleResult oracle_routing(const std::vector<Mat>& u_hat, int iters) {
  const std::size_t n_in = u_hat.size();
  const std::size_t n_out = u_hat[0].size();
  const std::size_t d = u_hat[0][0].size();

  Mat b(n_in, Vec(n_out, 0.0));
  Mat c(n_in, Vec(n_out, 0.0));
  Mat v(n_out, Vec(d, 0.0));

  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n_in; ++i) {
      double mx = *std::max_element(b[i].begin(), b[i].end());
      double sum = 0;
      for (std::size_t j = 0; j < n_out; ++j) {
        c[i][j] = std::exp(b[i][j] - mx);
        sum += c[i][j];
      }
      for (std::size_t j = 0; j < n_out; ++j) c[i][j] /= sum;
    }
    for (std::size_t j = 0; j < n_out; ++j) {
      Vec s(d, 0.0);
      for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t k = 0; k < d; ++k) s[k] += c[i][j] * u_hat[i][j][k];
      }
      v[j] = oracle_squash(s);
    }
    for (std::size_t i = 0; i < n_in; ++i) {
      for (std::size_t j = 0; j < n_out; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += u_hat[i][j][k] * v[j][k];
        b[i][j] += dot;
      }
    }
  }
  return {v, c};
}

Predictions to_predictions(const std::vector<Mat>& u_hat) {
  Predictions p(u_hat.size(), u_hat[0].size(), u_hat[0][0].size());
  for (std::size_t i = 0; i < p.n_in; ++i) {
    for (std::size_t j = 0; j < p.n_out; ++j) {
      std::copy(u_hat[i][j].begin(), u_hat[i][j].end(), p.at(i, j).begin());
    }
  }
  return p;
}

double vec_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("affine_predict identity and hand case") {
  SUBCASE("identity transforms reproduce the poses") {
    PoseArray u(2, 2);
    u.row(0)[0] = 0.3;
    u.row(0)[1] = -0.7;
    u.row(1)[0] = 1.5;
    u.row(1)[1] = 0.1;
    TransformWeights w(2, 3, 2, 2);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        auto m = w.matrix(i, j);
        m[0] = 1.0;
        m[3] = 1.0;
      }
    }
    auto p = affine_predict(u, w);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(p.at(i, j)[0] == u.row(i)[0]);
        CHECK(p.at(i, j)[1] == u.row(i)[1]);
      }
    }
  }
  SUBCASE("zero poses map to zero predictions") {
    PoseArray u(2, 3);
    TransformWeights w(2, 2, 4, 3);
    RngStream rng(1);
    for (double& x : w.raw()) x = rng.next_gaussian();
    auto p = affine_predict(u, w);
    for (double x : p.data) CHECK(x == 0.0);
  }
  SUBCASE("swap matrix") {
    PoseArray u(1, 2);
    u.row(0)[0] = 3.0;
    u.row(0)[1] = 5.0;
    TransformWeights w(1, 1, 2, 2);
    auto m = w.matrix(0, 0);
    m[0] = 0.0;
    m[1] = 1.0;
    m[2] = 1.0;
    m[3] = 0.0;
    auto p = affine_predict(u, w);
    CHECK(p.at(0, 0)[0] == 5.0);
    CHECK(p.at(0, 0)[1] == 3.0);
  }
  SUBCASE("shape mismatch throws") {
    PoseArray u(2, 3);
    TransformWeights w(2, 2, 4, 2);
    CHECK_THROWS_AS(affine_predict(u, w), InvalidArgument);
  }
}

TEST_CASE("squash known norms") {
  Vec zero{0, 0, 0};
  auto z = squash(zero);
  for (double x : z) CHECK(x == 0.0);

  Vec unit{1, 0, 0};
  auto s1 = squash(unit);
  CHECK(vec_norm(s1) == doctest::Approx(0.5));
  CHECK(s1[0] == doctest::Approx(0.5));

  Vec three{0, 3, 0};
  auto s3 = squash(three);
  CHECK(vec_norm(s3) == doctest::Approx(0.9));
  CHECK(s3[1] > 0);
}

TEST_CASE("squash norm is < 1 and strictly increasing") {
  RngStream rng(12);
  double prev_norm = -1.0;
  for (double r = 0.0; r < 50.0; r += 0.37) {
    Vec a{r, 0.0};
    double n = vec_norm(squash(a));
    CHECK(n < 1.0);
    CHECK(n > prev_norm);
    prev_norm = n;
  }
  for (int i = 0; i < 100; ++i) {
    Vec a(3);
    for (double& x : a) x = rng.next_gaussian() * 10;
    CHECK(vec_norm(squash(a)) < 1.0);
  }
}

TEST_CASE("coupling_softmax values and stability") {
  Vec uniform{0.0, 0.0};
  auto u = coupling_softmax(uniform);
  CHECK(u[0] == doctest::Approx(0.5));
  CHECK(u[1] == doctest::Approx(0.5));

  Vec ln2{std::log(2.0), 0.0};
  auto l = coupling_softmax(ln2);
  CHECK(l[0] == doctest::Approx(2.0 / 3.0));
  CHECK(l[1] == doctest::Approx(1.0 / 3.0));

  // extended-precision oracle for the extreme case
  Vec big{1000.0, 0.0};
  auto b = coupling_softmax(big);
  long double e = std::exp(static_cast<long double>(0.0 - 1000.0));
  long double oracle0 = 1.0L / (1.0L + e);
  CHECK(std::isfinite(b[0]));
  CHECK(std::isfinite(b[1]));
  CHECK(b[0] == doctest::Approx(static_cast<double>(oracle0)));
  CHECK(b[1] <= 1e-300);
  CHECK(b[0] + b[1] == doctest::Approx(1.0));
}

TEST_CASE("dynamic_routing single output class") {
  // softmax over one class forces c = 1; v = squash(sum of predictions)
  RngStream rng(31);
  std::vector<Mat> u_hat(3, Mat(1, Vec(4)));
  Vec total(4, 0.0);
  for (auto& row : u_hat) {
    for (double& x : row[0]) x = rng.next_gaussian();
    for (std::size_t k = 0; k < 4; ++k) total[k] += row[0][k];
  }
  auto r = dynamic_routing(to_predictions(u_hat), 3);
  auto expect = oracle_squash(total);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(r.v.row(0)[k] == doctest::Approx(expect[k]).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.coupling.c_row(i)[0] == 1.0);
}

TEST_CASE("dynamic_routing zero predictions give zero poses, uniform couplings") {
  Predictions p(4, 3, 2);
  auto r = dynamic_routing(p, 3);
  for (double x : r.v.data) CHECK(x == 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(r.coupling.c_row(i)[j] == doctest::Approx(1.0 / 3.0));
    }
  }
}

TEST_CASE("dynamic_routing matches the step-by-step oracle") {
  RngStream rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n_in = 2 + rng.next_below(3);
    std::size_t n_out = 2 + rng.next_below(2);
    std::size_t d = 2 + rng.next_below(3);
    int iters = 1 + static_cast<int>(rng.next_below(4));
    std::vector<Mat> u_hat(n_in, Mat(n_out, Vec(d)));
    for (auto& row : u_hat) {
      for (auto& cell : row) {
        for (double& x : cell) x = rng.next_gaussian();
      }
    }
    auto ours = dynamic_routing(to_predictions(u_hat), iters);
    auto oracle = oracle_routing(u_hat, iters);
    for (std::size_t j = 0; j < n_out; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        CHECK(ours.v.row(j)[k] == doctest::Approx(oracle.v[j][k]).epsilon(1e-12));
      }
    }
    for (std::size_t i = 0; i < n_in; ++i) {
      for (std::size_t j = 0; j < n_out; ++j) {
        CHECK(ours.coupling.c_row(i)[j] ==
              doctest::Approx(oracle.c[i][j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("routing agreement beats disagreement") {
  // Inputs agree on class 0 (identical unit vectors) and cancel on class 1.
  std::vector<Mat> u_hat(2, Mat(2, Vec(2, 0.0)));
  u_hat[0][0] = {1.0, 0.0};
  u_hat[1][0] = {1.0, 0.0};
  u_hat[0][1] = {0.0, 1.0};
  u_hat[1][1] = {0.0, -1.0};

  auto r = dynamic_routing(to_predictions(u_hat), 3);
  auto oracle = oracle_routing(u_hat, 3);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r.coupling.c_row(i)[0] > r.coupling.c_row(i)[1]);
    CHECK(r.coupling.c_row(i)[0] ==
          doctest::Approx(oracle.c[i][0]).epsilon(1e-12));
  }
}

TEST_CASE("coupling rows stay distributions across iterations") {
  RngStream rng(33);
  Predictions p(5, 4, 3);
  for (double& x : p.data) x = rng.next_gaussian() * 2.0;
  std::vector<CouplingState> trace;
  dynamic_routing(p, 5, &trace);
  REQUIRE(trace.size() == 5);
  for (const auto& cs : trace) {
    for (std::size_t i = 0; i < cs.n_in; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < cs.n_out; ++j) {
        CHECK(cs.c_row(i)[j] >= 0.0);
        sum += cs.c_row(i)[j];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("routing with k=1 equals uniform-coupling closed form") {
  RngStream rng(34);
  Predictions p(4, 3, 2);
  for (double& x : p.data) x = rng.next_gaussian();

  auto r = dynamic_routing(p, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    Vec s(2, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t k = 0; k < 2; ++k) s[k] += (1.0 / 3.0) * p.at(i, j)[k];
    }
    auto expect = oracle_squash(s);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(r.v.row(j)[k] == doctest::Approx(expect[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("duplicated input capsules get identical coupling rows") {
  RngStream rng(35);
  Predictions p(4, 3, 3);
  for (double& x : p.data) x = rng.next_gaussian();
  // duplicate capsule 0's prediction rows into capsule 3
  for (std::size_t j = 0; j < 3; ++j) {
    auto src = p.at(0, j);
    auto dst = p.at(3, j);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  auto r = dynamic_routing(p, 4);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(r.coupling.c_row(0)[j] ==
          doctest::Approx(r.coupling.c_row(3)[j]).epsilon(1e-14));
  }
}

TEST_CASE("margin loss hand cases") {
  MarginLossParams def;

  SUBCASE("all hinges inactive") {
    PoseArray v(2, 2);
    v.row(0)[0] = 0.95;  // label capsule above m_plus
    v.row(1)[0] = 0.05;  // other capsule below m_minus
    CHECK(margin_loss(v, 0, def) == 0.0);
  }
  SUBCASE("all norms zero costs m_plus squared") {
    PoseArray v(3, 4);
    CHECK(margin_loss(v, 1, def) == doctest::Approx(0.81));
  }
  SUBCASE("two classes at 0.5") {
    PoseArray v(2, 1);
    v.row(0)[0] = 0.5;
    v.row(1)[0] = 0.5;
    // (0.9-0.5)^2 + 0.5*(0.5-0.1)^2 = 0.16 + 0.08
    CHECK(margin_loss(v, 0, def) == doctest::Approx(0.24));
  }
  SUBCASE("label out of range") {
    PoseArray v(2, 2);
    CHECK_THROWS_AS(margin_loss(v, 2, def), InvalidArgument);
  }
  SUBCASE("invalid params") {
    PoseArray v(2, 2);
    CHECK_THROWS_AS(margin_loss(v, 0, MarginLossParams{0.1, 0.9, 0.5}),
                    InvalidArgument);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  RngStream rng(36);
  const double step = 1e-5;
  const double tol = 1e-4;

  int checked = 0;
  int attempts = 0;
  while (checked < 10 && attempts < 200) {
    ++attempts;
    std::size_t n_in = 2 + rng.next_below(2);
    std::size_t d_in = 2 + rng.next_below(2);
    std::size_t n_out = 2 + rng.next_below(2);
    std::size_t d_out = 2 + rng.next_below(2);
    std::size_t label = rng.next_below(n_out);

    PoseArray u(n_in, d_in);
    for (double& x : u.data) x = rng.next_gaussian() * 0.5;
    TransformWeights w(n_in, n_out, d_out, d_in);
    for (double& x : w.raw()) x = rng.next_gaussian() * 0.5;

    // couplings from a routing pass, then held fixed
    auto routing = dynamic_routing(affine_predict(u, w), 3);
    const CouplingState& c = routing.coupling;

    // skip instances sitting on a hinge boundary where FD is ill-posed
    bool near_hinge = false;
    for (std::size_t j = 0; j < n_out; ++j) {
      double n = vec_norm(routing.v.row(j));
      if (std::abs(n - 0.9) < 1e-3 || std::abs(n - 0.1) < 1e-3 || n < 1e-6) {
        near_hinge = true;
      }
    }
    if (near_hinge) continue;

    auto grads = margin_loss_grads_fixed_coupling(u, w, c, label, {});

    auto loss_at = [&](const PoseArray& uu, const TransformWeights& ww) {
      return margin_loss_grads_fixed_coupling(uu, ww, c, label, {}).loss;
    };

    double max_rel = 0.0;
    for (std::size_t k = 0; k < w.raw().size(); ++k) {
      TransformWeights wp = w, wm = w;
      wp.raw()[k] += step;
      wm.raw()[k] -= step;
      double fd = (loss_at(u, wp) - loss_at(u, wm)) / (2 * step);
      double denom = std::max({std::abs(fd), std::abs(grads.d_transform[k]), 1e-6});
      max_rel = std::max(max_rel, std::abs(fd - grads.d_transform[k]) / denom);
    }
    for (std::size_t k = 0; k < u.data.size(); ++k) {
      PoseArray up = u, um = u;
      up.data[k] += step;
      um.data[k] -= step;
      double fd = (loss_at(up, w) - loss_at(um, w)) / (2 * step);
      double denom = std::max({std::abs(fd), std::abs(grads.d_poses[k]), 1e-6});
      max_rel = std::max(max_rel, std::abs(fd - grads.d_poses[k]) / denom);
    }
    CHECK(max_rel < tol);
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("train_local contracts") {
  ModelConfig cfg;
  cfg.input_dim = 8;
  cfg.n_primary = 3;
  cfg.d_primary = 3;
  cfg.n_classes = 2;
  cfg.d_out = 3;

  RngStream data_rng(91);
  LabeledDataset data;
  data.feature_dim = 8;
  const std::size_t n = 60;
  data.y.resize(n);
  data.x.resize(n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    data.y[i] = static_cast<std::uint32_t>(i % 2);
    double center = data.y[i] == 0 ? -1.2 : 1.2;
    for (std::size_t c = 0; c < 8; ++c) {
      data.x[i * 8 + c] = center + data_rng.next_gaussian() * 0.6;
    }
  }

  auto model = CapsuleClassifier::init(cfg, 7);

  SUBCASE("epochs=0 leaves the model unchanged") {
    auto r = train_local(model, data, 0, 0.1, 5);
    CHECK(r.model.weights().data() == model.weights().data());
    CHECK(r.metrics.accuracy.has_value());
  }
  SUBCASE("identical seeds give bitwise identical weights") {
    auto a = train_local(model, data, 3, 0.1, 5);
    auto b = train_local(model, data, 3, 0.1, 5);
    CHECK(a.model.weights().data() == b.model.weights().data());
    auto c = train_local(model, data, 3, 0.1, 6);
    CHECK(a.model.weights().data() != c.model.weights().data());
  }
  SUBCASE("training reduces mean loss") {
    double before = 0, after = 0;
    for (std::size_t i = 0; i < n; ++i) before += model.loss(data.sample(i), data.y[i]);
    auto r = train_local(model, data, 10, 0.5, 5);
    for (std::size_t i = 0; i < n; ++i) after += r.model.loss(data.sample(i), data.y[i]);
    CHECK(after < before);
    CHECK(r.metrics.accuracy.value() > 0.8);
  }
  SUBCASE("empty partition rejected") {
    LabeledDataset empty;
    empty.feature_dim = 8;
    CHECK_THROWS_AS(train_local(model, empty, 1, 0.1, 5), InvalidArgument);
  }
  SUBCASE("out-of-range label rejected") {
    LabeledDataset bad = data;
    bad.y[0] = 9;
    CHECK_THROWS_AS(train_local(model, bad, 1, 0.1, 5), InvalidArgument);
  }
}

TEST_CASE("conv feature path trains deterministically") {
  ModelConfig cfg;
  cfg.feature = FeatureKind::kConv2d;
  cfg.image_height = 12;
  cfg.image_width = 12;
  cfg.conv_kernel = 5;
  cfg.conv_stride = 3;
  cfg.conv_channels = 4;
  cfg.d_primary = 2;
  cfg.n_classes = 2;
  cfg.d_out = 3;

  RngStream rng(92);
  LabeledDataset data;
  data.feature_dim = 144;
  const std::size_t n = 40;
  data.y.resize(n);
  data.x.resize(n * 144);
  for (std::size_t i = 0; i < n; ++i) {
    data.y[i] = static_cast<std::uint32_t>(i % 2);
    for (std::size_t p = 0; p < 144; ++p) {
      data.x[i * 144 + p] = 0.1 * std::abs(rng.next_gaussian());
    }
    if (data.y[i] == 1) {
      // bright 4x4 patch
      for (std::size_t yy = 4; yy < 8; ++yy) {
        for (std::size_t xx = 4; xx < 8; ++xx) {
          data.x[i * 144 + yy * 12 + xx] += 0.8;
        }
      }
    }
  }

  auto model = CapsuleClassifier::init(cfg, 17);
  auto r = train_local(model, data, 15, 1.0, 3);
  CHECK(r.metrics.accuracy.value() >= 0.9);

  auto again = train_local(model, data, 15, 1.0, 3);
  CHECK(r.model.weights().data() == again.model.weights().data());
}

TEST_CASE("checkpoint round trip and hash binding") {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.n_primary = 2;
  cfg.d_primary = 2;
  cfg.n_classes = 2;
  cfg.d_out = 2;
  auto model = CapsuleClassifier::init(cfg, 123);

  auto dir = std::filesystem::temp_directory_path() / "fedchain-ckpt-test";
  std::filesystem::create_directories(dir);
  auto prefix = dir / "model";

  model.save_checkpoint(prefix);
  auto loaded = CapsuleClassifier::load_checkpoint(prefix);
  CHECK(loaded.weights().data() == model.weights().data());
  CHECK(loaded.model_hash() == model.model_hash());
  CHECK(loaded.config().input_dim == 6);

  SUBCASE("tampered blob is rejected") {
    auto blob = prefix;
    blob += ".bin";
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    char b = 0x5a;
    f.write(&b, 1);
    f.close();
    CHECK_THROWS_AS(CapsuleClassifier::load_checkpoint(prefix), IoError);
  }
}

TEST_CASE("checkpoint manifest records the init seed") {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.n_primary = 2;
  cfg.d_primary = 2;
  cfg.d_out = 2;
  auto model = CapsuleClassifier::init(cfg, 4242);
  CHECK(model.init_seed() == 4242);

  auto dir = std::filesystem::temp_directory_path() / "fedchain-ckpt-seed";
  std::filesystem::create_directories(dir);
  model.save_checkpoint(dir / "m");
  auto loaded = CapsuleClassifier::load_checkpoint(dir / "m");
  CHECK(loaded.init_seed() == 4242);
}
