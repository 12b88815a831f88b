#pragma once

// Independent straight-line re-computations used as oracles. Everything here
// works element by element from the raw parameter matrices and stays off the
// library's kernel and gradient paths on purpose.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "probeforge/probes.hpp"

namespace oracles {

using probeforge::Matrix;
using probeforge::ProbeFamily;
using probeforge::ProbeParams;

inline std::vector<double> relu_vec(std::vector<double> v) {
  for (double& x : v)
    if (x < 0) x = 0;
  return v;
}

inline std::vector<double> affine(const Matrix& w, const Matrix& b, std::span<const double> x) {
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = b(0, i);
    for (std::size_t j = 0; j < w.cols(); ++j) acc += w(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

// POS forwards, dropout off.
inline std::vector<double> forward_pos(const ProbeParams& p, std::span<const double> h) {
  if (p.family == ProbeFamily::linear) {
    const Matrix& r = p.tensor("R");
    std::vector<double> z(r.rows(), 0.0);
    for (std::size_t i = 0; i < r.rows(); ++i)
      for (std::size_t j = 0; j < r.cols(); ++j) z[i] += r(i, j) * h[j];
    return affine(p.tensor("L"), p.tensor("b"), z);
  }
  std::vector<double> h1 = relu_vec(affine(p.tensor("W1"), p.tensor("b1"), h));
  if (p.family == ProbeFamily::mlp1) return affine(p.tensor("W2"), p.tensor("b2"), h1);
  std::vector<double> h2 = relu_vec(affine(p.tensor("W2"), p.tensor("b2"), h1));
  return affine(p.tensor("W3"), p.tensor("b3"), h2);
}

// Dependency score for "head of token i is j" (both 1-based), dropout off.
inline double dep_score(const ProbeParams& p, const Matrix& h_seq, int j, int i) {
  const std::size_t d = h_seq.cols();
  const double* hj = h_seq.row(static_cast<std::size_t>(j - 1));
  const double* hi = h_seq.row(static_cast<std::size_t>(i - 1));
  if (p.family == ProbeFamily::bilinear) {
    // h_j^T (L R) h_i + b
    const Matrix& low = p.tensor("L");
    const Matrix& right = p.tensor("R");
    double score = p.tensor("b")(0, 0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t c = 0; c < d; ++c) {
        double lr = 0.0;
        for (std::size_t u = 0; u < low.cols(); ++u) lr += low(a, u) * right(u, c);
        score += hj[a] * lr * hi[c];
      }
    return score;
  }
  std::vector<double> pair(2 * d);
  for (std::size_t c = 0; c < d; ++c) {
    pair[c] = hj[c];
    pair[d + c] = hi[c];
  }
  std::vector<double> h1 = relu_vec(affine(p.tensor("W1"), p.tensor("b1"), pair));
  if (p.family == ProbeFamily::mlp1) {
    const Matrix& w2 = p.tensor("W2");
    double s = p.tensor("b2")(0, 0);
    for (std::size_t u = 0; u < w2.cols(); ++u) s += w2(0, u) * h1[u];
    return s;
  }
  std::vector<double> h2 = relu_vec(affine(p.tensor("W2"), p.tensor("b2"), h1));
  const Matrix& w3 = p.tensor("W3");
  double s = p.tensor("b3")(0, 0);
  for (std::size_t u = 0; u < w3.cols(); ++u) s += w3(0, u) * h2[u];
  return s;
}

inline std::vector<double> dep_logits(const ProbeParams& p, const Matrix& h_seq, int i) {
  std::vector<double> logits(h_seq.rows());
  for (std::size_t j = 0; j < h_seq.rows(); ++j)
    logits[j] = dep_score(p, h_seq, static_cast<int>(j) + 1, i);
  return logits;
}

inline double xent(std::span<const double> logits, int gold) {
  double m = logits[0];
  for (double x : logits) m = std::max(m, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - m);
  return m + std::log(sum) - logits[static_cast<std::size_t>(gold) - 1];
}

// Mean batch loss plus the L2 term, computed entirely through the oracle
// forwards. This is the loss function the finite-difference check perturbs.
inline double pos_batch_loss(const ProbeParams& p, const Matrix& x, std::span<const int> gold,
                             double weight_decay) {
  double loss = 0.0;
  for (std::size_t row = 0; row < x.rows(); ++row)
    loss += xent(forward_pos(p, std::span(x.row(row), x.cols())), gold[row]);
  loss /= static_cast<double>(x.rows());
  double norm_sq = 0.0;
  for (const Matrix& t : p.tensors)
    for (double v : t.flat()) norm_sq += v * v;
  return loss + 0.5 * weight_decay * norm_sq;
}

inline double dep_batch_loss(const ProbeParams& p, const Matrix& h_seq,
                             std::span<const std::pair<int, int>> decisions, double weight_decay) {
  double loss = 0.0;
  for (const auto& [i, g] : decisions) loss += xent(dep_logits(p, h_seq, i), g);
  loss /= static_cast<double>(decisions.size());
  double norm_sq = 0.0;
  for (const Matrix& t : p.tensors)
    for (double v : t.flat()) norm_sq += v * v;
  return loss + 0.5 * weight_decay * norm_sq;
}

// Central finite differences of `loss` over every parameter element against
// the provided analytic gradients. The denominator is floored at 1e-5, the
// scale below which the difference quotient itself is dominated by double
// rounding of the loss (~1e-11 absolute at step 1e-5); coordinates under the
// floor are effectively compared absolutely at 1e-9.
template <class LossFn>
double max_grad_relative_error(ProbeParams& p, const std::vector<Matrix>& analytic, LossFn loss,
                               double step = 1e-5, double floor = 1e-5) {
  double worst = 0.0;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    auto values = p.tensors[t].flat();
    for (std::size_t idx = 0; idx < values.size(); ++idx) {
      const double saved = values[idx];
      values[idx] = saved + step;
      const double up = loss(p);
      values[idx] = saved - step;
      const double down = loss(p);
      values[idx] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = analytic[t].flat()[idx];
      const double denom = std::max({std::abs(fd), std::abs(an), floor});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// The Adam recurrence, one scalar parameter, written out plainly.
inline std::vector<double> adam_scalar_trace(double theta0, std::span<const double> grads,
                                             double alpha, double beta1 = 0.9,
                                             double beta2 = 0.999, double eps = 1e-8) {
  std::vector<double> trace;
  double theta = theta0, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g * g;
    const double m_hat = m / (1 - std::pow(beta1, static_cast<double>(t)));
    const double v_hat = v / (1 - std::pow(beta2, static_cast<double>(t)));
    theta -= alpha * m_hat / (std::sqrt(v_hat) + eps);
    trace.push_back(theta);
  }
  return trace;
}

}  // namespace oracles
