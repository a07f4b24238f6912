#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fedchain/capsnet.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/hash.hpp"
#include "fedchain/rng.hpp"

namespace fedchain::capsnet {

namespace {

void apply_squash_jacobian(std::span<const double> p, std::span<const double> g,
                           std::span<double> out) {
  double r2 = 0.0;
  for (double x : p) r2 += x * x;
  double r = std::sqrt(r2);
  if (r == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  double q = r / (1.0 + r2);
  double qp = (1.0 - r2) / ((1.0 + r2) * (1.0 + r2));
  double sg = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) sg += p[k] * g[k];
  double coef = qp / r * sg;
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = q * g[k] + coef * p[k];
}

struct ConvShape {
  std::size_t oh = 0, ow = 0;
};

ConvShape conv_output_shape(const ModelConfig& cfg) {
  if (cfg.image_height < cfg.conv_kernel || cfg.image_width < cfg.conv_kernel) {
    throw InvalidArgument("conv kernel larger than image");
  }
  ConvShape s;
  s.oh = (cfg.image_height - cfg.conv_kernel) / cfg.conv_stride + 1;
  s.ow = (cfg.image_width - cfg.conv_kernel) / cfg.conv_stride + 1;
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_classes < 2) throw InvalidArgument("need at least two classes");
  if (d_primary == 0 || d_out == 0) throw InvalidArgument("pose dims must be positive");
  if (routing_iters < 1) throw InvalidArgument("routing_iters must be >= 1");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (feature == FeatureKind::kLinear) {
    if (input_dim == 0 || n_primary == 0) {
      throw InvalidArgument("linear feature layer needs input_dim and n_primary");
    }
  } else {
    if (conv_stride == 0 || conv_kernel == 0 || conv_channels == 0) {
      throw InvalidArgument("conv feature layer needs positive kernel/stride/channels");
    }
    if (conv_channels % d_primary != 0) {
      throw InvalidArgument("conv_channels must be a multiple of d_primary");
    }
    conv_output_shape(*this);
  }
  if (!(0.0 < loss.m_minus && loss.m_minus < loss.m_plus && loss.m_plus < 1.0)) {
    throw InvalidArgument("margin loss requires 0 < m_minus < m_plus < 1");
  }
}

std::size_t ModelConfig::flat_input_size() const {
  return feature == FeatureKind::kLinear ? input_dim : image_height * image_width;
}

std::size_t ModelConfig::primary_capsules() const {
  if (feature == FeatureKind::kLinear) return n_primary;
  ConvShape s = conv_output_shape(*this);
  return (conv_channels / d_primary) * s.oh * s.ow;
}

CapsuleLayerConfig ModelConfig::capsule_layer() const {
  return CapsuleLayerConfig{primary_capsules(), d_primary, n_classes, d_out,
                            routing_iters};
}

CapsuleClassifier CapsuleClassifier::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CapsuleClassifier m;
  m.cfg_ = cfg;
  m.init_seed_ = seed;

  std::size_t fw, fb;
  if (cfg.feature == FeatureKind::kLinear) {
    fw = cfg.n_primary * cfg.d_primary * cfg.input_dim;
    fb = cfg.n_primary * cfg.d_primary;
  } else {
    fw = cfg.conv_channels * cfg.conv_kernel * cfg.conv_kernel;
    fb = cfg.conv_channels;
  }
  m.feature_w_.resize(fw);
  m.feature_b_.assign(fb, 0.0);
  m.transform_ = TransformWeights(cfg.primary_capsules(), cfg.n_classes,
                                  cfg.d_out, cfg.d_primary);

  RngStream rng(seed);
  RngStream feat = rng.derive("init/feature");
  for (double& w : m.feature_w_) {
    w = (feat.next_double() * 2.0 - 1.0) * cfg.init_scale;
  }
  RngStream trans = rng.derive("init/transform");
  for (double& w : m.transform_.raw()) {
    w = (trans.next_double() * 2.0 - 1.0) * cfg.init_scale;
  }
  return m;
}

std::size_t CapsuleClassifier::parameter_count() const {
  return feature_w_.size() + feature_b_.size() + transform_.raw().size();
}

WeightTensor CapsuleClassifier::weights() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  flat.insert(flat.end(), feature_w_.begin(), feature_w_.end());
  flat.insert(flat.end(), feature_b_.begin(), feature_b_.end());
  flat.insert(flat.end(), transform_.raw().begin(), transform_.raw().end());
  return WeightTensor(std::move(flat), {parameter_count()});
}

void CapsuleClassifier::set_weights(const WeightTensor& w) {
  if (w.size() != parameter_count()) {
    throw InvalidArgument("weight vector does not match model parameter count");
  }
  const auto& d = w.data();
  std::size_t off = 0;
  std::copy(d.begin() + off, d.begin() + off + feature_w_.size(), feature_w_.begin());
  off += feature_w_.size();
  std::copy(d.begin() + off, d.begin() + off + feature_b_.size(), feature_b_.begin());
  off += feature_b_.size();
  std::copy(d.begin() + off, d.end(), transform_.raw().begin());
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

struct ForwardCache {
  std::vector<double> pre_squash;  // primary poses before squash, n_in x d_in
  PoseArray u;                     // squashed primary poses
  RoutingResult routing;
};

}  // namespace

struct TrainerAccess {
  static void featurize(const CapsuleClassifier& m, std::span<const double> x,
                        std::vector<double>& pre_squash) {
    const ModelConfig& cfg = m.cfg_;
    const std::size_t n_in = cfg.primary_capsules();
    pre_squash.assign(n_in * cfg.d_primary, 0.0);

    if (cfg.feature == FeatureKind::kLinear) {
      const std::size_t rows = cfg.n_primary * cfg.d_primary;
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = m.feature_b_[r];
        const double* wr = m.feature_w_.data() + r * cfg.input_dim;
        for (std::size_t c = 0; c < cfg.input_dim; ++c) acc += wr[c] * x[c];
        pre_squash[r] = acc;
      }
      return;
    }

    ConvShape s = conv_output_shape(cfg);
    const std::size_t k = cfg.conv_kernel, stride = cfg.conv_stride;
    for (std::size_t ch = 0; ch < cfg.conv_channels; ++ch) {
      const double* kern = m.feature_w_.data() + ch * k * k;
      const double bias = m.feature_b_[ch];
      const std::size_t g = ch / cfg.d_primary;
      const std::size_t r = ch % cfg.d_primary;
      for (std::size_t oy = 0; oy < s.oh; ++oy) {
        for (std::size_t ox = 0; ox < s.ow; ++ox) {
          double acc = bias;
          for (std::size_t u = 0; u < k; ++u) {
            const double* row = x.data() + (oy * stride + u) * cfg.image_width +
                                ox * stride;
            for (std::size_t v = 0; v < k; ++v) acc += kern[u * k + v] * row[v];
          }
          const std::size_t capsule = (g * s.oh + oy) * s.ow + ox;
          pre_squash[capsule * cfg.d_primary + r] = acc;
        }
      }
    }
  }

  static ForwardCache forward_cached(const CapsuleClassifier& m,
                                     std::span<const double> x) {
    const ModelConfig& cfg = m.cfg_;
    if (x.size() != cfg.flat_input_size()) {
      throw InvalidArgument("input size does not match model configuration");
    }
    ForwardCache cache;
    featurize(m, x, cache.pre_squash);

    const std::size_t n_in = cfg.primary_capsules();
    cache.u = PoseArray(n_in, cfg.d_primary);
    for (std::size_t i = 0; i < n_in; ++i) {
      auto sq = squash(std::span<const double>(
          cache.pre_squash.data() + i * cfg.d_primary, cfg.d_primary));
      std::copy(sq.begin(), sq.end(), cache.u.row(i).begin());
    }

    Predictions u_hat = affine_predict(cache.u, m.transform_);
    cache.routing = dynamic_routing(u_hat, cfg.routing_iters);
    return cache;
  }

  // Accumulates one sample's gradient into flat gradient buffers.
  static double accumulate_gradients(const CapsuleClassifier& m,
                                     std::span<const double> x, std::size_t label,
                                     std::vector<double>& g_feature_w,
                                     std::vector<double>& g_feature_b,
                                     std::vector<double>& g_transform) {
    const ModelConfig& cfg = m.cfg_;
    ForwardCache cache = forward_cached(m, x);

    LossGrads lg = margin_loss_grads_fixed_coupling(
        cache.u, m.transform_, cache.routing.coupling, label, cfg.loss);

    for (std::size_t i = 0; i < g_transform.size(); ++i) {
      g_transform[i] += lg.d_transform[i];
    }

    // Through the primary squash back to the feature layer outputs.
    const std::size_t n_in = cfg.primary_capsules();
    std::vector<double> gp(n_in * cfg.d_primary);
    for (std::size_t i = 0; i < n_in; ++i) {
      apply_squash_jacobian(
          std::span<const double>(cache.pre_squash.data() + i * cfg.d_primary,
                                  cfg.d_primary),
          std::span<const double>(lg.d_poses.data() + i * cfg.d_primary,
                                  cfg.d_primary),
          std::span<double>(gp.data() + i * cfg.d_primary, cfg.d_primary));
    }

    if (cfg.feature == FeatureKind::kLinear) {
      const std::size_t rows = cfg.n_primary * cfg.d_primary;
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = gp[r];
        if (gr == 0.0) continue;
        double* wr = g_feature_w.data() + r * cfg.input_dim;
        for (std::size_t c = 0; c < cfg.input_dim; ++c) wr[c] += gr * x[c];
        g_feature_b[r] += gr;
      }
    } else {
      ConvShape s = conv_output_shape(cfg);
      const std::size_t k = cfg.conv_kernel, stride = cfg.conv_stride;
      for (std::size_t ch = 0; ch < cfg.conv_channels; ++ch) {
        double* gkern = g_feature_w.data() + ch * k * k;
        const std::size_t g = ch / cfg.d_primary;
        const std::size_t r = ch % cfg.d_primary;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const std::size_t capsule = (g * s.oh + oy) * s.ow + ox;
            const double gr = gp[capsule * cfg.d_primary + r];
            if (gr == 0.0) continue;
            for (std::size_t u = 0; u < k; ++u) {
              const double* row = x.data() +
                                  (oy * stride + u) * cfg.image_width + ox * stride;
              for (std::size_t v = 0; v < k; ++v) gkern[u * k + v] += gr * row[v];
            }
            g_feature_b[ch] += gr;
          }
        }
      }
    }
    return lg.loss;
  }

  static std::vector<double>& feature_w(CapsuleClassifier& m) { return m.feature_w_; }
  static std::vector<double>& feature_b(CapsuleClassifier& m) { return m.feature_b_; }
  static TransformWeights& transform(CapsuleClassifier& m) { return m.transform_; }
};

PoseArray CapsuleClassifier::forward(std::span<const double> x) const {
  return TrainerAccess::forward_cached(*this, x).routing.v;
}

std::vector<double> CapsuleClassifier::class_probs(std::span<const double> x) const {
  PoseArray v = forward(x);
  std::vector<double> norms(v.count);
  double sum = 0.0;
  for (std::size_t j = 0; j < v.count; ++j) {
    double s = 0.0;
    for (double q : v.row(j)) s += q * q;
    norms[j] = std::sqrt(s);
    sum += norms[j];
  }
  if (sum == 0.0) {
    std::fill(norms.begin(), norms.end(), 1.0 / static_cast<double>(v.count));
    return norms;
  }
  for (double& n : norms) n /= sum;
  return norms;
}

std::size_t CapsuleClassifier::predict(std::span<const double> x) const {
  auto p = class_probs(x);
  return static_cast<std::size_t>(
      std::max_element(p.begin(), p.end()) - p.begin());
}

double CapsuleClassifier::scalar_prediction(std::span<const double> x) const {
  auto p = class_probs(x);
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) acc += static_cast<double>(j) * p[j];
  return acc;
}

double CapsuleClassifier::loss(std::span<const double> x, std::size_t label) const {
  PoseArray v = forward(x);
  return margin_loss(v, label, cfg_.loss);
}

// ---------------------------------------------------------------------------
// Evaluation and training
// ---------------------------------------------------------------------------

EvalResult evaluate(const CapsuleClassifier& model, const LabeledDataset& data) {
  if (data.size() == 0) throw InvalidArgument("evaluate: empty dataset");
  const std::size_t n_classes = model.config().n_classes;

  ConfusionCounts counts;
  std::uint64_t correct = 0;
  std::vector<double> actual(data.size()), predicted(data.size());
  double loss_sum = 0.0;

  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint32_t y = data.y[i];
    if (y >= n_classes) throw InvalidArgument("evaluate: label out of range");
    auto x = data.sample(i);
    std::size_t yhat = model.predict(x);
    if (yhat == y) ++correct;
    if (n_classes == 2) {
      if (y == 1 && yhat == 1) ++counts.tp;
      if (y == 0 && yhat == 1) ++counts.fp;
      if (y == 0 && yhat == 0) ++counts.tn;
      if (y == 1 && yhat == 0) ++counts.fn;
    }
    actual[i] = static_cast<double>(y);
    predicted[i] = model.scalar_prediction(x);
    loss_sum += model.loss(x, y);
  }

  EvalResult r;
  if (n_classes == 2) {
    r.metrics = classification_metrics(counts);
  } else {
    r.metrics.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  }
  r.metrics.mae = mae(actual, predicted);
  r.mean_loss = loss_sum / static_cast<double>(data.size());
  return r;
}

TrainResult train_local(const CapsuleClassifier& start, const LabeledDataset& part,
                        int epochs, double learning_rate, std::uint64_t seed) {
  if (part.size() == 0) throw InvalidArgument("train_local: empty partition");
  if (epochs < 0) throw InvalidArgument("train_local: negative epochs");
  const ModelConfig& cfg = start.config();
  if (part.feature_dim != cfg.flat_input_size()) {
    throw InvalidArgument("train_local: dataset feature size does not match model");
  }
  for (std::uint32_t y : part.y) {
    if (y >= cfg.n_classes) throw InvalidArgument("train_local: label out of range");
  }

  CapsuleClassifier model = start;
  RngStream rng(seed);

  std::vector<std::size_t> order(part.size());
  std::iota(order.begin(), order.end(), 0);

  auto& fw = TrainerAccess::feature_w(model);
  auto& fb = TrainerAccess::feature_b(model);
  auto& tw = TrainerAccess::transform(model).raw();

  std::vector<double> g_fw(fw.size()), g_fb(fb.size()), g_tw(tw.size());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    RngStream shuffle_rng = rng.derive("epoch/" + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = shuffle_rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      std::fill(g_fw.begin(), g_fw.end(), 0.0);
      std::fill(g_fb.begin(), g_fb.end(), 0.0);
      std::fill(g_tw.begin(), g_tw.end(), 0.0);

      for (std::size_t t = begin; t < end; ++t) {
        const std::size_t idx = order[t];
        TrainerAccess::accumulate_gradients(model, part.sample(idx), part.y[idx],
                                            g_fw, g_fb, g_tw);
      }

      const double step = learning_rate / static_cast<double>(end - begin);
      for (std::size_t i = 0; i < fw.size(); ++i) fw[i] -= step * g_fw[i];
      for (std::size_t i = 0; i < fb.size(); ++i) fb[i] -= step * g_fb[i];
      for (std::size_t i = 0; i < tw.size(); ++i) tw[i] -= step * g_tw[i];
    }
  }

  TrainResult result{std::move(model), {}};
  result.metrics = evaluate(result.model, part).metrics;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::string CapsuleClassifier::model_hash() const {
  auto blob = weights().to_le_bytes();
  return sha256_hex(blob);
}

void CapsuleClassifier::save_checkpoint(const std::filesystem::path& prefix) const {
  std::filesystem::path blob_path = prefix;
  blob_path += ".bin";
  std::filesystem::path manifest_path = prefix;
  manifest_path += ".json";

  auto blob = weights().to_le_bytes();
  {
    std::ofstream os(blob_path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint blob: " + blob_path.string());
    os.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size()));
  }

  nlohmann::ordered_json j;
  j["format"] = "fedchain-capsnet-v1";
  j["feature"] = cfg_.feature == FeatureKind::kLinear ? "linear" : "conv2d";
  j["input_dim"] = cfg_.input_dim;
  j["image_height"] = cfg_.image_height;
  j["image_width"] = cfg_.image_width;
  j["conv_kernel"] = cfg_.conv_kernel;
  j["conv_stride"] = cfg_.conv_stride;
  j["conv_channels"] = cfg_.conv_channels;
  j["n_primary"] = cfg_.n_primary;
  j["d_primary"] = cfg_.d_primary;
  j["n_classes"] = cfg_.n_classes;
  j["d_out"] = cfg_.d_out;
  j["routing_iters"] = cfg_.routing_iters;
  j["m_plus"] = cfg_.loss.m_plus;
  j["m_minus"] = cfg_.loss.m_minus;
  j["lambda"] = cfg_.loss.lambda;
  j["init_scale"] = cfg_.init_scale;
  j["batch_size"] = cfg_.batch_size;
  j["init_seed"] = init_seed_;
  j["parameter_count"] = parameter_count();
  j["weights_file"] = blob_path.filename().string();
  j["weights_sha256"] = sha256_hex(blob);

  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint manifest: " + manifest_path.string());
  os << j.dump(2) << "\n";
}

CapsuleClassifier CapsuleClassifier::load_checkpoint(const std::filesystem::path& prefix) {
  std::filesystem::path blob_path = prefix;
  blob_path += ".bin";
  std::filesystem::path manifest_path = prefix;
  manifest_path += ".json";

  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open checkpoint manifest: " + manifest_path.string());
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw IoError("malformed checkpoint manifest");
  if (j.value("format", "") != "fedchain-capsnet-v1") {
    throw IoError("unsupported checkpoint format");
  }

  ModelConfig cfg;
  cfg.feature = j.at("feature").get<std::string>() == "conv2d" ? FeatureKind::kConv2d
                                                               : FeatureKind::kLinear;
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.image_height = j.at("image_height").get<std::size_t>();
  cfg.image_width = j.at("image_width").get<std::size_t>();
  cfg.conv_kernel = j.at("conv_kernel").get<std::size_t>();
  cfg.conv_stride = j.at("conv_stride").get<std::size_t>();
  cfg.conv_channels = j.at("conv_channels").get<std::size_t>();
  cfg.n_primary = j.at("n_primary").get<std::size_t>();
  cfg.d_primary = j.at("d_primary").get<std::size_t>();
  cfg.n_classes = j.at("n_classes").get<std::size_t>();
  cfg.d_out = j.at("d_out").get<std::size_t>();
  cfg.routing_iters = j.at("routing_iters").get<int>();
  cfg.loss.m_plus = j.at("m_plus").get<double>();
  cfg.loss.m_minus = j.at("m_minus").get<double>();
  cfg.loss.lambda = j.at("lambda").get<double>();
  cfg.init_scale = j.at("init_scale").get<double>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();

  CapsuleClassifier model =
      CapsuleClassifier::init(cfg, j.value("init_seed", std::uint64_t{0}));

  std::ifstream bs(blob_path, std::ios::binary);
  if (!bs) throw IoError("cannot open checkpoint blob: " + blob_path.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bs)),
                                 std::istreambuf_iterator<char>());
  if (blob.size() != model.parameter_count() * sizeof(double)) {
    throw IoError("checkpoint blob size mismatch");
  }
  if (sha256_hex(blob) != j.at("weights_sha256").get<std::string>()) {
    throw IoError("checkpoint blob hash mismatch");
  }

  std::vector<double> flat(model.parameter_count());
  std::memcpy(flat.data(), blob.data(), blob.size());
  model.set_weights(WeightTensor(std::move(flat), {model.parameter_count()}));
  return model;
}

}  // namespace fedchain::capsnet
