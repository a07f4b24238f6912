#include "fedchain/capsnet.hpp"

#include <algorithm>
#include <cmath>

#include "fedchain/errors.hpp"

namespace fedchain::capsnet {

namespace {

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// s_j = sum_i c_ij * u_hat_ij for one output capsule.
void weighted_sum(const Predictions& u_hat, const CouplingState& cs,
                  std::size_t j, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < u_hat.n_in; ++i) {
    const double cij = cs.c[i * cs.n_out + j];
    auto uh = u_hat.at(i, j);
    for (std::size_t r = 0; r < u_hat.d_out; ++r) out[r] += cij * uh[r];
  }
}

// J_squash(s) . g  =  q(r) g + (q'(r)/r) s (s^T g),  q(r) = r/(1+r^2).
void squash_jacobian_apply(std::span<const double> s, std::span<const double> g,
                           std::span<double> out) {
  double r2 = 0.0;
  for (double x : s) r2 += x * x;
  double r = std::sqrt(r2);
  if (r == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  double q = r / (1.0 + r2);
  double qp = (1.0 - r2) / ((1.0 + r2) * (1.0 + r2));
  double sg = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) sg += s[k] * g[k];
  double coef = qp / r * sg;
  for (std::size_t k = 0; k < s.size(); ++k) out[k] = q * g[k] + coef * s[k];
}

void check_margin_params(const MarginLossParams& p) {
  if (!(0.0 < p.m_minus && p.m_minus < p.m_plus && p.m_plus < 1.0)) {
    throw InvalidArgument("margin loss requires 0 < m_minus < m_plus < 1");
  }
  if (p.lambda < 0.0) throw InvalidArgument("margin loss lambda must be >= 0");
}

}  // namespace

void CapsuleLayerConfig::validate() const {
  if (n_in == 0 || d_in == 0 || n_out == 0 || d_out == 0) {
    throw InvalidArgument("capsule layer dimensions must be positive");
  }
  if (routing_iters < 1) throw InvalidArgument("routing_iters must be >= 1");
}

TransformWeights::TransformWeights(std::size_t n_in, std::size_t n_out,
                                   std::size_t d_out, std::size_t d_in)
    : n_in_(n_in), n_out_(n_out), d_out_(d_out), d_in_(d_in),
      raw_(n_in * n_out * d_out * d_in, 0.0) {
  if (n_in == 0 || n_out == 0 || d_out == 0 || d_in == 0) {
    throw InvalidArgument("transform weights need positive dimensions");
  }
}

Predictions affine_predict(const PoseArray& u, const TransformWeights& w) {
  if (u.count != w.n_in() || u.dim != w.d_in()) {
    throw InvalidArgument("affine_predict: pose shape does not match transforms");
  }
  Predictions out(w.n_in(), w.n_out(), w.d_out());
  for (std::size_t i = 0; i < w.n_in(); ++i) {
    auto ui = u.row(i);
    for (std::size_t j = 0; j < w.n_out(); ++j) {
      auto m = w.matrix(i, j);
      auto uh = out.at(i, j);
      for (std::size_t r = 0; r < w.d_out(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w.d_in(); ++c) acc += m[r * w.d_in() + c] * ui[c];
        uh[r] = acc;
      }
    }
  }
  return out;
}

std::vector<double> squash(std::span<const double> a) {
  std::vector<double> out(a.size(), 0.0);
  double r2 = 0.0;
  for (double x : a) r2 += x * x;
  if (r2 == 0.0) return out;
  double r = std::sqrt(r2);
  double scale = (r2 / (1.0 + r2)) / r;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * scale;
  return out;
}

std::vector<double> coupling_softmax(std::span<const double> b_row) {
  if (b_row.empty()) throw InvalidArgument("coupling_softmax: empty logits");
  double m = *std::max_element(b_row.begin(), b_row.end());
  std::vector<double> out(b_row.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < b_row.size(); ++i) {
    out[i] = std::exp(b_row[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

RoutingResult dynamic_routing(const Predictions& u_hat, int iterations,
                              std::vector<CouplingState>* trace) {
  if (iterations < 1) throw InvalidArgument("dynamic_routing: iterations must be >= 1");
  if (u_hat.n_in == 0 || u_hat.n_out == 0 || u_hat.d_out == 0) {
    throw InvalidArgument("dynamic_routing: empty prediction array");
  }

  CouplingState cs(u_hat.n_in, u_hat.n_out);
  PoseArray v(u_hat.n_out, u_hat.d_out);

  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < cs.n_in; ++i) {
      auto c = coupling_softmax(cs.b_row(i));
      std::copy(c.begin(), c.end(), cs.c_row(i).begin());
    }
    std::vector<double> s(u_hat.d_out);
    for (std::size_t j = 0; j < u_hat.n_out; ++j) {
      weighted_sum(u_hat, cs, j, s);
      auto vj = squash(s);
      std::copy(vj.begin(), vj.end(), v.row(j).begin());
    }
    for (std::size_t i = 0; i < cs.n_in; ++i) {
      for (std::size_t j = 0; j < cs.n_out; ++j) {
        double agreement = 0.0;
        auto uh = u_hat.at(i, j);
        auto vj = v.row(j);
        for (std::size_t r = 0; r < u_hat.d_out; ++r) agreement += uh[r] * vj[r];
        cs.b[i * cs.n_out + j] += agreement;
      }
    }
    if (trace) trace->push_back(cs);
  }
  return RoutingResult{std::move(v), std::move(cs)};
}

double margin_loss(const PoseArray& v, std::size_t label,
                   const MarginLossParams& params) {
  check_margin_params(params);
  if (label >= v.count) throw InvalidArgument("margin_loss: label out of range");
  double total = 0.0;
  for (std::size_t j = 0; j < v.count; ++j) {
    double n = norm_of(v.row(j));
    if (j == label) {
      double h = std::max(0.0, params.m_plus - n);
      total += h * h;
    } else {
      double h = std::max(0.0, n - params.m_minus);
      total += params.lambda * h * h;
    }
  }
  return total;
}

LossGrads margin_loss_grads_fixed_coupling(const PoseArray& u,
                                           const TransformWeights& w,
                                           const CouplingState& coupling,
                                           std::size_t label,
                                           const MarginLossParams& params) {
  check_margin_params(params);
  if (coupling.n_in != w.n_in() || coupling.n_out != w.n_out()) {
    throw InvalidArgument("coupling state does not match transform shape");
  }
  if (label >= w.n_out()) throw InvalidArgument("label out of range");

  Predictions u_hat = affine_predict(u, w);

  const std::size_t n_in = w.n_in(), n_out = w.n_out();
  const std::size_t d_out = w.d_out(), d_in = w.d_in();

  LossGrads g;
  g.d_transform.assign(w.raw().size(), 0.0);
  g.d_poses.assign(n_in * d_in, 0.0);

  std::vector<double> s(d_out), gs(d_out), gv(d_out);
  double total = 0.0;

  for (std::size_t j = 0; j < n_out; ++j) {
    weighted_sum(u_hat, coupling, j, s);
    auto vj = squash(s);
    double n = norm_of(vj);

    // dL/dv_j
    std::fill(gv.begin(), gv.end(), 0.0);
    if (j == label) {
      double h = std::max(0.0, params.m_plus - n);
      total += h * h;
      if (h > 0.0 && n > 0.0) {
        double coef = -2.0 * h / n;
        for (std::size_t r = 0; r < d_out; ++r) gv[r] = coef * vj[r];
      }
    } else {
      double h = std::max(0.0, n - params.m_minus);
      total += params.lambda * h * h;
      if (h > 0.0 && n > 0.0) {
        double coef = 2.0 * params.lambda * h / n;
        for (std::size_t r = 0; r < d_out; ++r) gv[r] = coef * vj[r];
      }
    }

    squash_jacobian_apply(s, gv, gs);

    for (std::size_t i = 0; i < n_in; ++i) {
      const double cij = coupling.c[i * n_out + j];
      if (cij == 0.0) continue;
      auto ui = u.row(i);
      auto m = w.matrix(i, j);
      double* dm = g.d_transform.data() + (i * n_out + j) * d_out * d_in;
      double* du = g.d_poses.data() + i * d_in;
      for (std::size_t r = 0; r < d_out; ++r) {
        const double gr = cij * gs[r];
        for (std::size_t c = 0; c < d_in; ++c) {
          dm[r * d_in + c] += gr * ui[c];
          du[c] += gr * m[r * d_in + c];
        }
      }
    }
  }

  g.loss = total;
  return g;
}

}  // namespace fedchain::capsnet
