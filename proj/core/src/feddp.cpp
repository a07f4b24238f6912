#include "fedchain/feddp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedchain/errors.hpp"

namespace fedchain::feddp {

void FedConfig::validate() const {
  if (!(clip_bound > 0.0)) throw InvalidArgument("clip_bound S must be positive");
  if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be >= 0");
  if (subsample < 1) throw InvalidArgument("subsample m_t must be >= 1");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (gamma < 0.0 || gamma > 1.0) throw InvalidArgument("gamma must lie in [0, 1]");
}

std::vector<std::string> subsample(std::span<const std::string> hospital_ids,
                                   std::size_t m_t, RngStream& rng) {
  if (hospital_ids.empty()) throw InvalidArgument("subsample: empty id list");
  if (m_t < 1) throw InvalidArgument("subsample: m_t must be >= 1");

  std::vector<std::string> pool(hospital_ids.begin(), hospital_ids.end());
  const std::size_t take = std::min(m_t, pool.size());
  // Partial Fisher-Yates: the first `take` slots end up a uniform sample.
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + rng.next_below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  return pool;
}

WeightTensor clip_update(const WeightTensor& delta, double clip_bound) {
  if (!(clip_bound > 0.0)) throw InvalidArgument("clip_update: S must be positive");
  delta.check_finite("clip_update");
  double norm = l2_norm(delta);
  // The identity band is widened by one part in 1e12 so that a rescaled
  // tensor, whose norm lands within rounding of S, passes through unchanged
  // and clipping is exactly idempotent.
  if (norm <= clip_bound * (1.0 + 1e-12)) return delta;
  return scale(delta, clip_bound / norm);
}

WeightTensor dp_federated_round(const WeightTensor& w_t,
                                std::span<const ModelUpdate> updates,
                                const FedConfig& cfg, RngStream& rng) {
  cfg.validate();
  if (updates.empty()) throw InvalidArgument("dp_federated_round: no updates");
  for (const ModelUpdate& u : updates) {
    if (!u.delta.same_shape(w_t)) {
      throw InvalidArgument("dp_federated_round: update shape mismatch");
    }
  }

  const std::size_t m = updates.size();
  std::vector<double> acc(w_t.size(), 0.0);
  for (const ModelUpdate& u : updates) {
    WeightTensor clipped = clip_update(u.delta, cfg.clip_bound);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += clipped.data()[i];
  }

  if (cfg.noise_sigma > 0.0) {
    const double noise_std = cfg.noise_sigma * cfg.clip_bound;
    for (double& a : acc) a += noise_std * rng.next_gaussian();
  }

  std::vector<double> next(w_t.size());
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] = w_t.data()[i] + inv_m * acc[i];
  }
  return WeightTensor(std::move(next), w_t.shape());
}

UpdateStats update_stats(std::span<const WeightTensor> updates) {
  if (updates.empty()) throw InvalidArgument("update_stats: no updates");
  const WeightTensor& first = updates.front();
  for (const WeightTensor& u : updates) {
    if (!u.same_shape(first)) throw InvalidArgument("update_stats: shape mismatch");
  }

  const std::size_t n = first.size();
  const double inv_h = 1.0 / static_cast<double>(updates.size());

  std::vector<double> mu(n, 0.0);
  for (const WeightTensor& u : updates) {
    for (std::size_t i = 0; i < n; ++i) mu[i] += u.data()[i];
  }
  for (double& m : mu) m *= inv_h;

  std::vector<double> var(n, 0.0);
  for (const WeightTensor& u : updates) {
    for (std::size_t i = 0; i < n; ++i) {
      double d = u.data()[i] - mu[i];
      var[i] += d * d;
    }
  }
  for (double& v : var) v *= inv_h;

  UpdateStats stats;
  double vc = 0.0, us = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    vc += var[i];
    us += mu[i] * mu[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  stats.vc = vc * inv_n;
  stats.us = us * inv_n;
  stats.var_matrix = WeightTensor(std::move(var), first.shape());
  return stats;
}

WeightTensor laplace_perturb(const WeightTensor& m, double sensitivity,
                             double epsilon, RngStream& rng) {
  if (!(epsilon > 0.0)) throw InvalidArgument("laplace_perturb: epsilon must be positive");
  if (sensitivity < 0.0) throw InvalidArgument("laplace_perturb: negative sensitivity");
  if (sensitivity == 0.0) return m;

  const double scale = sensitivity / epsilon;
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = m.data()[i] + scale * rng.next_laplace();
  }
  return WeightTensor(std::move(out), m.shape());
}

double sensitivity_bound(const WeightTensor& a, const WeightTensor& b) {
  if (!a.same_shape(b)) throw InvalidArgument("sensitivity_bound: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += std::abs(a.data()[i] - b.data()[i]);
  }
  return sum;
}

double max_sensitivity(
    std::span<const std::pair<WeightTensor, WeightTensor>> neighbor_outputs) {
  double best = 0.0;
  for (const auto& [fa, fb] : neighbor_outputs) {
    best = std::max(best, sensitivity_bound(fa, fb));
  }
  return best;
}

DpRatioReport dp_ratio_check(const Mechanism& mechanism, double r_input,
                             double r_prime_input, double epsilon,
                             std::size_t outcome_bins, std::size_t trials,
                             RngStream& rng, double tolerance) {
  if (trials == 0) throw InvalidArgument("dp_ratio_check: zero trials");
  if (outcome_bins < 2) throw InvalidArgument("dp_ratio_check: need at least 2 bins");

  RngStream rng_r = rng.derive("dp-check/R");
  RngStream rng_rp = rng.derive("dp-check/R'");

  std::vector<double> out_r(trials), out_rp(trials);
  for (std::size_t t = 0; t < trials; ++t) out_r[t] = mechanism(r_input, rng_r);
  for (std::size_t t = 0; t < trials; ++t) out_rp[t] = mechanism(r_prime_input, rng_rp);

  // Shared bin range: pooled central quantiles; everything beyond is folded
  // into the boundary bins so tail bins keep enough mass for stable ratios.
  std::vector<double> pooled;
  pooled.reserve(2 * trials);
  pooled.insert(pooled.end(), out_r.begin(), out_r.end());
  pooled.insert(pooled.end(), out_rp.begin(), out_rp.end());
  std::sort(pooled.begin(), pooled.end());
  auto quantile = [&](double q) {
    double pos = q * static_cast<double>(pooled.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, pooled.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return pooled[lo] * (1.0 - frac) + pooled[hi] * frac;
  };
  double lo = quantile(0.005);
  double hi = quantile(0.995);
  if (!(hi > lo)) {
    // Degenerate spread; widen symmetrically so binning stays defined.
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(outcome_bins);

  auto bin_of = [&](double x) {
    if (x <= lo) return std::size_t{0};
    if (x >= hi) return outcome_bins - 1;
    return std::min(static_cast<std::size_t>((x - lo) / width), outcome_bins - 1);
  };

  std::vector<std::uint64_t> hist_r(outcome_bins, 0), hist_rp(outcome_bins, 0);
  for (double x : out_r) ++hist_r[bin_of(x)];
  for (double x : out_rp) ++hist_rp[bin_of(x)];

  double max_ratio = 0.0;
  for (std::size_t b = 0; b < outcome_bins; ++b) {
    if (hist_r[b] == 0 && hist_rp[b] == 0) continue;
    if (hist_rp[b] == 0) {
      max_ratio = std::numeric_limits<double>::infinity();
      break;
    }
    double ratio = static_cast<double>(hist_r[b]) / static_cast<double>(hist_rp[b]);
    max_ratio = std::max(max_ratio, ratio);
  }

  DpRatioReport report;
  report.max_ratio = max_ratio;
  report.bins = outcome_bins;
  report.trials = trials;
  report.holds = max_ratio <= std::exp(epsilon) * (1.0 + tolerance);
  return report;
}

}  // namespace fedchain::feddp
