#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedchain/rng.hpp"
#include "fedchain/tensor.hpp"

namespace fedchain::feddp {

struct FedConfig {
  double clip_bound = 1.0;                              // S, > 0
  double noise_sigma = 0.0;                             // sigma, >= 0
  std::size_t subsample = 1;                            // m_t, >= 1
  double epsilon = 1.0;                                 // > 0
  double gamma = 0.5;                                   // consensus weight, in [0, 1]
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct ModelUpdate {
  std::string hospital;  // node id, hex
  WeightTensor delta;
};

struct RoundState {
  std::uint64_t round_index = 0;
  WeightTensor global_weights;
  std::vector<std::string> sampled_set;  // X_t, no duplicates
};

/// Per-parameter variance of the hospital updates plus the Vc / Us summary
/// statistics over the update matrix.
struct UpdateStats {
  WeightTensor var_matrix;
  double vc = 0.0;
  double us = 0.0;
};

// Uniform sample without replacement of size min(m_t, H).
std::vector<std::string> subsample(std::span<const std::string> hospital_ids,
                                   std::size_t m_t, RngStream& rng);

// delta / max(1, |delta|_2 / S); returns the input unchanged when within
// bound, so the no-clip path is bitwise exact.
WeightTensor clip_update(const WeightTensor& delta, double clip_bound);

// w_{t+1} = w_t + (1/m)(sum_H clip(delta_H, S) + n), n elementwise Gaussian
// with standard deviation sigma*S and m the number of updates supplied.
WeightTensor dp_federated_round(const WeightTensor& w_t,
                                std::span<const ModelUpdate> updates,
                                const FedConfig& cfg, RngStream& rng);

// mu = mean over hospitals; VAR[.] the population variance per parameter;
// Vc the mean of the variances; Us the mean of mu^2.
UpdateStats update_stats(std::span<const WeightTensor> updates);

// m_hat = m + Laplace(0, sensitivity/epsilon) elementwise. sensitivity == 0
// returns the input bitwise.
WeightTensor laplace_perturb(const WeightTensor& m, double sensitivity,
                             double epsilon, RngStream& rng);

// L1 distance |f(H) - f(H')|_1 between outputs on neighboring inputs.
double sensitivity_bound(const WeightTensor& a, const WeightTensor& b);

// Harness helper: max of sensitivity_bound over supplied neighbor pairs.
double max_sensitivity(
    std::span<const std::pair<WeightTensor, WeightTensor>> neighbor_outputs);

/// Empirical check of the epsilon-DP outcome-ratio bound over histogram bins.
struct DpRatioReport {
  double max_ratio = 0.0;  // +inf when a populated bin has empty counterpart
  bool holds = false;
  std::size_t bins = 0;
  std::size_t trials = 0;
};

// A randomized mechanism bound to a fixed input; one invocation = one draw.
using Mechanism = std::function<double(double input, RngStream& rng)>;

// Histograms `trials` outputs for the neighboring inputs over shared bins
// spanning the pooled central quantile range (outliers land in the edge
// bins), then reports max Pr[bin|R] / Pr[bin|R'] over populated bins and
// whether it stays below e^eps * (1 + tolerance).
DpRatioReport dp_ratio_check(const Mechanism& mechanism, double r_input,
                             double r_prime_input, double epsilon,
                             std::size_t outcome_bins, std::size_t trials,
                             RngStream& rng, double tolerance = 0.15);

}  // namespace fedchain::feddp
