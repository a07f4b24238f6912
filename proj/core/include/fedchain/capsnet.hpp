#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedchain/metrics.hpp"
#include "fedchain/tensor.hpp"

namespace fedchain::capsnet {

struct CapsuleLayerConfig {
  std::size_t n_in = 0;   // input capsule count
  std::size_t d_in = 0;   // input pose dimension
  std::size_t n_out = 0;  // output capsule count
  std::size_t d_out = 0;  // output pose dimension
  int routing_iters = 3;

  void validate() const;
};

/// Fixed-width array of pose vectors.
struct PoseArray {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // count x dim, row-major

  PoseArray() = default;
  PoseArray(std::size_t count_, std::size_t dim_)
      : count(count_), dim(dim_), data(count_ * dim_, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * dim, dim};
  }
};

/// The transform bank W: one d_out x d_in matrix per (input, output) pair.
class TransformWeights {
 public:
  TransformWeights() = default;
  TransformWeights(std::size_t n_in, std::size_t n_out, std::size_t d_out,
                   std::size_t d_in);

  std::size_t n_in() const { return n_in_; }
  std::size_t n_out() const { return n_out_; }
  std::size_t d_out() const { return d_out_; }
  std::size_t d_in() const { return d_in_; }

  // Matrix for pair (i, j), row-major d_out x d_in.
  std::span<double> matrix(std::size_t i, std::size_t j) {
    return {raw_.data() + offset(i, j), d_out_ * d_in_};
  }
  std::span<const double> matrix(std::size_t i, std::size_t j) const {
    return {raw_.data() + offset(i, j), d_out_ * d_in_};
  }

  std::vector<double>& raw() { return raw_; }
  const std::vector<double>& raw() const { return raw_; }

 private:
  std::size_t offset(std::size_t i, std::size_t j) const {
    return (i * n_out_ + j) * d_out_ * d_in_;
  }

  std::size_t n_in_ = 0, n_out_ = 0, d_out_ = 0, d_in_ = 0;
  std::vector<double> raw_;
};

/// Prediction vectors u_hat[i][j], each of dimension d_out.
struct Predictions {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t d_out = 0;
  std::vector<double> data;

  Predictions() = default;
  Predictions(std::size_t n_in_, std::size_t n_out_, std::size_t d_out_)
      : n_in(n_in_), n_out(n_out_), d_out(d_out_),
        data(n_in_ * n_out_ * d_out_, 0.0) {}

  std::span<double> at(std::size_t i, std::size_t j) {
    return {data.data() + (i * n_out + j) * d_out, d_out};
  }
  std::span<const double> at(std::size_t i, std::size_t j) const {
    return {data.data() + (i * n_out + j) * d_out, d_out};
  }
};

/// Routing logits b and couplings c. Each coupling row c[i][.] is a
/// probability distribution over the output capsules.
struct CouplingState {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::vector<double> b;
  std::vector<double> c;

  CouplingState() = default;
  CouplingState(std::size_t n_in_, std::size_t n_out_)
      : n_in(n_in_), n_out(n_out_), b(n_in_ * n_out_, 0.0),
        c(n_in_ * n_out_, 0.0) {}

  std::span<double> b_row(std::size_t i) { return {b.data() + i * n_out, n_out}; }
  std::span<const double> b_row(std::size_t i) const {
    return {b.data() + i * n_out, n_out};
  }
  std::span<double> c_row(std::size_t i) { return {c.data() + i * n_out, n_out}; }
  std::span<const double> c_row(std::size_t i) const {
    return {c.data() + i * n_out, n_out};
  }
};

// u_hat[i][j] = W[i][j] * u[i].
Predictions affine_predict(const PoseArray& u, const TransformWeights& w);

// (|a|^2 / (1 + |a|^2)) * (a / |a|); zero maps to zero.
std::vector<double> squash(std::span<const double> a);

// Stable softmax of one logit row.
std::vector<double> coupling_softmax(std::span<const double> b_row);

struct RoutingResult {
  PoseArray v;             // output poses, n_out x d_out
  CouplingState coupling;  // couplings of the final iteration, logits after it
};

// Routing by agreement: b starts at zero; each iteration computes couplings,
// weighted sums, squashed outputs, then reinforces b with u_hat . v.
// `trace`, when given, receives the coupling state of every iteration.
RoutingResult dynamic_routing(const Predictions& u_hat, int iterations,
                              std::vector<CouplingState>* trace = nullptr);

struct MarginLossParams {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;
};

double margin_loss(const PoseArray& v, std::size_t label,
                   const MarginLossParams& params = {});

/// Loss and analytic gradients of margin_loss(squash(sum_i c_ij u_hat_ij))
/// with the couplings held fixed, the convention the trainer uses for the
/// routing couplings of the final iteration.
struct LossGrads {
  double loss = 0.0;
  std::vector<double> d_transform;  // layout of TransformWeights::raw()
  std::vector<double> d_poses;      // n_in x d_in, gradient w.r.t. u
};

LossGrads margin_loss_grads_fixed_coupling(const PoseArray& u,
                                           const TransformWeights& w,
                                           const CouplingState& coupling,
                                           std::size_t label,
                                           const MarginLossParams& params = {});

// ---------------------------------------------------------------------------
// Local learner: feature layer + one capsule layer trained by SGD.
// ---------------------------------------------------------------------------

enum class FeatureKind { kLinear, kConv2d };

struct ModelConfig {
  FeatureKind feature = FeatureKind::kLinear;

  // Linear path: input_dim -> n_primary poses of d_primary.
  std::size_t input_dim = 16;

  // Conv path: single-channel image -> conv_channels feature maps -> capsules.
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t conv_kernel = 5;
  std::size_t conv_stride = 3;
  std::size_t conv_channels = 8;

  std::size_t n_primary = 4;  // primary capsule count (linear path)
  std::size_t d_primary = 4;  // primary pose dimension
  std::size_t n_classes = 2;
  std::size_t d_out = 4;
  int routing_iters = 3;
  MarginLossParams loss;
  double init_scale = 0.2;
  std::size_t batch_size = 16;

  void validate() const;
  std::size_t flat_input_size() const;
  std::size_t primary_capsules() const;  // n_in of the capsule layer
  CapsuleLayerConfig capsule_layer() const;
};

struct LabeledDataset {
  std::size_t feature_dim = 0;
  std::vector<double> x;          // n x feature_dim, row-major
  std::vector<std::uint32_t> y;   // class indices

  std::size_t size() const { return y.size(); }
  std::span<const double> sample(std::size_t i) const {
    return {x.data() + i * feature_dim, feature_dim};
  }
};

class CapsuleClassifier {
 public:
  CapsuleClassifier() = default;

  // Deterministic initialization of feature and transform weights.
  static CapsuleClassifier init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  WeightTensor weights() const;
  void set_weights(const WeightTensor& w);
  std::size_t parameter_count() const;

  // Output capsule poses for one input.
  PoseArray forward(std::span<const double> x) const;

  std::size_t predict(std::span<const double> x) const;
  // Normalized capsule norms; uniform when all norms vanish.
  std::vector<double> class_probs(std::span<const double> x) const;
  // Scalar regression view sum_j j*p_j, the value MAE consensus scores.
  double scalar_prediction(std::span<const double> x) const;
  double loss(std::span<const double> x, std::size_t label) const;

  std::uint64_t init_seed() const { return init_seed_; }

  // SHA-256 of the little-endian f64 weight blob.
  std::string model_hash() const;

  void save_checkpoint(const std::filesystem::path& prefix) const;
  static CapsuleClassifier load_checkpoint(const std::filesystem::path& prefix);

 private:
  friend struct TrainerAccess;

  ModelConfig cfg_;
  std::uint64_t init_seed_ = 0;
  std::vector<double> feature_w_;
  std::vector<double> feature_b_;
  TransformWeights transform_;
};

struct EvalResult {
  MetricsReport metrics;
  double mean_loss = 0.0;
};

// Confusion-based metrics (class 1 positive when binary), MAE of the scalar
// prediction against the labels, and mean margin loss.
EvalResult evaluate(const CapsuleClassifier& model, const LabeledDataset& data);

struct TrainResult {
  CapsuleClassifier model;
  MetricsReport metrics;  // computed on the training partition
};

// Mini-batch SGD under margin loss; bitwise deterministic given the seed.
// epochs == 0 returns the model unchanged with metrics of the initial weights.
TrainResult train_local(const CapsuleClassifier& start, const LabeledDataset& part,
                        int epochs, double learning_rate, std::uint64_t seed);

}  // namespace fedchain::capsnet
