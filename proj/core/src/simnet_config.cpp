#include <fstream>

#include "fedchain/errors.hpp"
#include "fedchain/simnet.hpp"

namespace fedchain::simnet {

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

capsnet::ModelConfig model_from_json(const nlohmann::json& t,
                                     capsnet::ModelConfig base) {
  std::string feature = get_or<std::string>(t, "feature", "linear");
  if (feature == "linear") {
    base.feature = capsnet::FeatureKind::kLinear;
  } else if (feature == "conv2d") {
    base.feature = capsnet::FeatureKind::kConv2d;
  } else {
    throw InvalidArgument("unknown feature kind: " + feature);
  }
  base.input_dim = get_or<std::size_t>(t, "input_dim", base.input_dim);
  base.image_height = get_or<std::size_t>(t, "image_height", base.image_height);
  base.image_width = get_or<std::size_t>(t, "image_width", base.image_width);
  base.conv_kernel = get_or<std::size_t>(t, "conv_kernel", base.conv_kernel);
  base.conv_stride = get_or<std::size_t>(t, "conv_stride", base.conv_stride);
  base.conv_channels = get_or<std::size_t>(t, "conv_channels", base.conv_channels);
  base.n_primary = get_or<std::size_t>(t, "n_primary", base.n_primary);
  base.d_primary = get_or<std::size_t>(t, "d_primary", base.d_primary);
  base.n_classes = get_or<std::size_t>(t, "n_classes", base.n_classes);
  base.d_out = get_or<std::size_t>(t, "d_out", base.d_out);
  base.routing_iters = get_or<int>(t, "routing_iters", base.routing_iters);
  base.loss.m_plus = get_or<double>(t, "m_plus", base.loss.m_plus);
  base.loss.m_minus = get_or<double>(t, "m_minus", base.loss.m_minus);
  base.loss.lambda = get_or<double>(t, "lambda", base.loss.lambda);
  base.init_scale = get_or<double>(t, "init_scale", base.init_scale);
  base.batch_size = get_or<std::size_t>(t, "batch_size", base.batch_size);
  return base;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;

  if (j.contains("experiment")) {
    const auto& e = j.at("experiment");
    cfg.n_hospitals = get_or<std::size_t>(e, "n_hospitals", cfg.n_hospitals);
    cfg.rounds = get_or<int>(e, "rounds", cfg.rounds);
    cfg.seed = get_or<std::uint64_t>(e, "seed", cfg.seed);
    cfg.scheme = partition_scheme_from_name(
        get_or<std::string>(e, "scheme", "iid-equal"));
    cfg.skew_ratios = get_or<std::vector<double>>(e, "skew_ratios", {});
    cfg.sweep_providers = get_or<bool>(e, "sweep_providers", cfg.sweep_providers);
    cfg.timestamp_base = get_or<std::int64_t>(e, "timestamp_base", cfg.timestamp_base);
    cfg.csv_path = get_or<std::string>(e, "csv_path", cfg.csv_path);
    cfg.jsonl_path = get_or<std::string>(e, "jsonl_path", cfg.jsonl_path);
    cfg.ledger_path = get_or<std::string>(e, "ledger_path", cfg.ledger_path);
  }

  if (j.contains("fed")) {
    const auto& f = j.at("fed");
    cfg.fed.clip_bound = get_or<double>(f, "clip_bound", cfg.fed.clip_bound);
    cfg.fed.noise_sigma = get_or<double>(f, "noise_sigma", cfg.fed.noise_sigma);
    cfg.fed.subsample = get_or<std::size_t>(f, "subsample", cfg.n_hospitals);
    cfg.fed.epsilon = get_or<double>(f, "epsilon", cfg.fed.epsilon);
    cfg.fed.gamma = get_or<double>(f, "gamma", cfg.fed.gamma);
    cfg.fed.rng_seed = get_or<std::uint64_t>(f, "rng_seed", cfg.seed);
    cfg.laplace_sensitivity =
        get_or<double>(f, "laplace_sensitivity", cfg.laplace_sensitivity);
  } else {
    cfg.fed.subsample = cfg.n_hospitals;
    cfg.fed.rng_seed = cfg.seed;
  }

  if (j.contains("chain")) {
    const auto& c = j.at("chain");
    cfg.category = get_or<std::string>(c, "category", cfg.category);
    if (c.contains("consensus_threshold") && !c.at("consensus_threshold").is_null()) {
      cfg.consensus_threshold = c.at("consensus_threshold").get<double>();
    }
  }

  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    cfg.trainer.model = model_from_json(t, cfg.trainer.model);
    cfg.trainer.epochs_per_round =
        get_or<int>(t, "epochs_per_round", cfg.trainer.epochs_per_round);
    cfg.trainer.learning_rate =
        get_or<double>(t, "learning_rate", cfg.trainer.learning_rate);
  }

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    cfg.dataset.kind = get_or<std::string>(d, "kind", cfg.dataset.kind);
    cfg.dataset.train_samples =
        get_or<std::size_t>(d, "train_samples", cfg.dataset.train_samples);
    cfg.dataset.validation_samples =
        get_or<std::size_t>(d, "validation_samples", cfg.dataset.validation_samples);
    cfg.dataset.test_samples =
        get_or<std::size_t>(d, "test_samples", cfg.dataset.test_samples);
    cfg.dataset.dim = get_or<std::size_t>(d, "dim", cfg.dataset.dim);
    cfg.dataset.separation = get_or<double>(d, "separation", cfg.dataset.separation);
    cfg.dataset.image_size = get_or<std::size_t>(d, "image_size", cfg.dataset.image_size);
    cfg.dataset.manifest_path =
        get_or<std::string>(d, "manifest_path", cfg.dataset.manifest_path);
    cfg.dataset.window.wl = get_or<double>(d, "wl", cfg.dataset.window.wl);
    cfg.dataset.window.ww = get_or<double>(d, "ww", cfg.dataset.window.ww);
  }

  // The conv path flattens images; keep the model's input description in sync
  // with the dataset so configs only state the dataset geometry once.
  if (cfg.dataset.kind == "lesion-images" || cfg.dataset.kind == "ctv-manifest") {
    if (cfg.trainer.model.feature == capsnet::FeatureKind::kConv2d) {
      cfg.trainer.model.image_height = cfg.dataset.image_size;
      cfg.trainer.model.image_width = cfg.dataset.image_size;
    } else {
      cfg.trainer.model.input_dim = cfg.dataset.image_size * cfg.dataset.image_size;
    }
  } else if (cfg.dataset.kind == "blobs") {
    cfg.trainer.model.input_dim = cfg.dataset.dim;
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw InvalidArgument("config file is not valid JSON");
  return config_from_json(j);
}

}  // namespace fedchain::simnet
