#pragma once

// The four probe families and everything a training step needs: forward
// passes, stabilized softmax cross-entropy, analytic gradients, inverted
// dropout and the low-rank factorization A = LR.
//
// Part-of-speech probes map one token vector to k class logits:
//   linear  softmax(L R h + b)
//   mlp-1   softmax(W2 relu(W1 h + b1) + b2)
//   mlp-2   softmax(W3 relu(W2 relu(W1 h + b1) + b2) + b3)
// Dependency probes score every candidate head j for a token i and softmax
// over the sentence:
//   bilinear  s(j,i) = h_j^T (L R) h_i + b
//   mlp-1     s(j,i) = W2 relu(W1 [h_j ; h_i] + b1) + b2
//   mlp-2     one extra hidden layer, same shape of output
// Rank/hidden width is the single bottleneck parameter l. Dropout applies to
// the input for linear/bilinear probes and to the input plus each hidden
// layer's output for MLPs; inverted scaling keeps eval a pure identity.
//
// All labels, head indices and predictions at this interface are 1-based.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "probeforge/matrix.hpp"
#include "probeforge/repr_store.hpp"
#include "probeforge/rng.hpp"

namespace probeforge {

enum class TaskKind { pos, dep };
enum class ProbeFamily { linear, bilinear, mlp1, mlp2 };

inline const char* task_name(TaskKind t) { return t == TaskKind::pos ? "pos" : "dep"; }

inline TaskKind task_from_name(const std::string& name) {
  if (name == "pos") return TaskKind::pos;
  if (name == "dep") return TaskKind::dep;
  throw std::invalid_argument("unknown task '" + name + "'");
}

inline const char* family_name(ProbeFamily f) {
  switch (f) {
    case ProbeFamily::linear: return "linear";
    case ProbeFamily::bilinear: return "bilinear";
    case ProbeFamily::mlp1: return "mlp1";
    default: return "mlp2";
  }
}

inline ProbeFamily family_from_name(const std::string& name) {
  if (name == "linear") return ProbeFamily::linear;
  if (name == "bilinear") return ProbeFamily::bilinear;
  if (name == "mlp1") return ProbeFamily::mlp1;
  if (name == "mlp2") return ProbeFamily::mlp2;
  throw std::invalid_argument("unknown probe family '" + name + "'");
}

inline int family_depth(ProbeFamily f) {
  switch (f) {
    case ProbeFamily::mlp1: return 1;
    case ProbeFamily::mlp2: return 2;
    default: return 0;
  }
}

struct ProbeDims {
  int k = 0;  // output classes (POS); unused for dependency probes
  int d = 0;  // representation dimensionality
  int l = 0;  // rank / hidden width bottleneck
};

struct ProbeParams {
  ProbeFamily family = ProbeFamily::linear;
  TaskKind task = TaskKind::pos;
  ProbeDims dims;
  std::uint64_t init_seed = 0;
  std::vector<Matrix> tensors;
  std::vector<std::string> names;

  Matrix& tensor(const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return tensors[i];
    throw std::out_of_range("ProbeParams: no tensor named " + name);
  }
  const Matrix& tensor(const std::string& name) const {
    return const_cast<ProbeParams*>(this)->tensor(name);
  }
};

struct DropoutSpec {
  double p = 0.0;
  bool train_mode = false;

  bool active() const { return train_mode && p > 0.0; }
};

// Inverted dropout on a vector: in train mode each coordinate is zeroed
// independently with probability p and survivors are scaled by 1/(1-p);
// eval mode is the identity. One rng draw per coordinate when active.
inline std::vector<double> apply_dropout(std::span<const double> values, const DropoutSpec& spec,
                                         Rng* rng) {
  std::vector<double> out(values.begin(), values.end());
  if (!spec.active()) return out;
  if (spec.p < 0.0 || spec.p >= 1.0)
    throw std::invalid_argument("apply_dropout: p must lie in [0,1)");
  if (rng == nullptr) throw std::invalid_argument("apply_dropout: rng required in train mode");
  const double scale = 1.0 / (1.0 - spec.p);
  for (double& x : out) x = rng->next_unit() < spec.p ? 0.0 : x * scale;
  return out;
}

namespace detail {

// In-place dropout over a matrix, recording the applied multiplier per
// element (0 or 1/(1-p)) for the backward pass. Row-major draw order.
inline void dropout_matrix(Matrix& values, const DropoutSpec& spec, Rng* rng, Matrix* mask) {
  if (!spec.active()) {
    if (mask) {
      *mask = Matrix(values.rows(), values.cols());
      mask->fill(1.0);
    }
    return;
  }
  if (spec.p < 0.0 || spec.p >= 1.0)
    throw std::invalid_argument("dropout: p must lie in [0,1)");
  if (rng == nullptr) throw std::invalid_argument("dropout: rng required in train mode");
  if (mask) *mask = Matrix(values.rows(), values.cols());
  const double scale = 1.0 / (1.0 - spec.p);
  auto v = values.flat();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double m = rng->next_unit() < spec.p ? 0.0 : scale;
    v[i] *= m;
    if (mask) mask->flat()[i] = m;
  }
}

inline void scale_by_mask(Matrix& grad, const Matrix& mask, bool mask_is_identity) {
  if (mask_is_identity) return;
  check_shapes(grad.same_shape(mask), "dropout mask");
  auto g = grad.flat();
  auto m = mask.flat();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= m[i];
}

}  // namespace detail

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the input
// width of each map; biases exactly zero. Tensor t draws from the sub-stream
// derive_stream(seed, t).
inline ProbeParams init_params(ProbeFamily family, TaskKind task, ProbeDims dims,
                               std::uint64_t seed) {
  if (dims.l < 1) throw std::invalid_argument("init_params: l must be >= 1");
  if (dims.d < 1) throw std::invalid_argument("init_params: d must be >= 1");
  if (task == TaskKind::pos && dims.k < 1)
    throw std::invalid_argument("init_params: k must be >= 1 for POS probes");
  if (task == TaskKind::pos && family == ProbeFamily::bilinear)
    throw std::invalid_argument("init_params: bilinear probes are dependency-only");
  if (task == TaskKind::dep && family == ProbeFamily::linear)
    throw std::invalid_argument("init_params: linear probes are POS-only");

  ProbeParams params;
  params.family = family;
  params.task = task;
  params.dims = dims;
  params.init_seed = seed;

  const std::size_t k = static_cast<std::size_t>(dims.k);
  const std::size_t d = static_cast<std::size_t>(dims.d);
  const std::size_t l = static_cast<std::size_t>(dims.l);

  auto add = [&params](const std::string& name, std::size_t rows, std::size_t cols) {
    params.names.push_back(name);
    params.tensors.emplace_back(rows, cols);
  };

  if (task == TaskKind::pos) {
    switch (family) {
      case ProbeFamily::linear:
        add("L", k, l);
        add("R", l, d);
        add("b", 1, k);
        break;
      case ProbeFamily::mlp1:
        add("W1", l, d);
        add("b1", 1, l);
        add("W2", k, l);
        add("b2", 1, k);
        break;
      default:
        add("W1", l, d);
        add("b1", 1, l);
        add("W2", l, l);
        add("b2", 1, l);
        add("W3", k, l);
        add("b3", 1, k);
        break;
    }
  } else {
    switch (family) {
      case ProbeFamily::bilinear:
        add("L", d, l);
        add("R", l, d);
        add("b", 1, 1);
        break;
      case ProbeFamily::mlp1:
        add("W1", l, 2 * d);
        add("b1", 1, l);
        add("W2", 1, l);
        add("b2", 1, 1);
        break;
      default:
        add("W1", l, 2 * d);
        add("b1", 1, l);
        add("W2", l, l);
        add("b2", 1, l);
        add("W3", 1, l);
        add("b3", 1, 1);
        break;
    }
  }

  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    if (params.names[t][0] == 'b') continue;  // biases stay zero
    Matrix& w = params.tensors[t];
    Rng rng(derive_stream(seed, t));
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (double& x : w.flat()) x = rng.next_symmetric(bound);
  }
  return params;
}

// Argmax with ties broken toward the lowest index; 1-based result, invariant
// to shifting all logits by a constant.
inline int predict(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("predict: empty logits");
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j)
    if (logits[j] > logits[best]) best = j;
  return static_cast<int>(best) + 1;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double x : logits) m = std::max(m, x);
  double sum = 0.0;
  std::vector<double> p(logits.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(logits[j] - m);
    sum += p[j];
  }
  for (double& x : p) x /= sum;
  return p;
}

// --- single-example forward passes ---------------------------------------

struct PosForward {
  std::vector<double> logits;
  // cached activations, enough to rerun the backward pass
  std::vector<double> input;               // h after input dropout
  std::vector<double> pre1, hidden1;       // MLPs: pre-activation and dropped output
  std::vector<double> pre2, hidden2;       // MLP-2 only
};

inline PosForward forward_pos(const ProbeParams& probe, std::span<const double> h,
                              const DropoutSpec& dropout, Rng* rng) {
  if (probe.task != TaskKind::pos) throw std::invalid_argument("forward_pos: not a POS probe");
  if (h.size() != static_cast<std::size_t>(probe.dims.d))
    throw std::invalid_argument("forward_pos: h has dimension " + std::to_string(h.size()) +
                                ", probe expects " + std::to_string(probe.dims.d));
  PosForward out;
  out.input = apply_dropout(h, dropout, rng);

  if (probe.family == ProbeFamily::linear) {
    const std::vector<double> z = matvec(probe.tensor("R"), out.input);
    out.logits = matvec(probe.tensor("L"), z);
    const Matrix& b = probe.tensor("b");
    for (std::size_t j = 0; j < out.logits.size(); ++j) out.logits[j] += b(0, j);
    return out;
  }

  auto affine = [](const Matrix& w, const Matrix& bias, std::span<const double> x) {
    std::vector<double> y = matvec(w, x);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += bias(0, j);
    return y;
  };
  auto relu = [](std::vector<double> v) {
    for (double& x : v) x = std::max(0.0, x);
    return v;
  };

  out.pre1 = affine(probe.tensor("W1"), probe.tensor("b1"), out.input);
  out.hidden1 = apply_dropout(relu(out.pre1), dropout, rng);
  if (probe.family == ProbeFamily::mlp1) {
    out.logits = affine(probe.tensor("W2"), probe.tensor("b2"), out.hidden1);
    return out;
  }
  out.pre2 = affine(probe.tensor("W2"), probe.tensor("b2"), out.hidden1);
  out.hidden2 = apply_dropout(relu(out.pre2), dropout, rng);
  out.logits = affine(probe.tensor("W3"), probe.tensor("b3"), out.hidden2);
  return out;
}

struct DepForward {
  std::vector<double> logits;  // one score per candidate head j = 1..T
  Matrix input;                // H after input dropout
};

inline DepForward forward_dep(const ProbeParams& probe, const Matrix& h_seq, int i,
                              const DropoutSpec& dropout, Rng* rng) {
  if (probe.task != TaskKind::dep) throw std::invalid_argument("forward_dep: not a dependency probe");
  const int t = static_cast<int>(h_seq.rows());
  if (h_seq.cols() != static_cast<std::size_t>(probe.dims.d))
    throw std::invalid_argument("forward_dep: H has d=" + std::to_string(h_seq.cols()) +
                                ", probe expects " + std::to_string(probe.dims.d));
  if (i < 1 || i > t)
    throw std::out_of_range("forward_dep: position " + std::to_string(i) + " outside 1.." +
                            std::to_string(t));
  DepForward out;
  out.input = h_seq;
  detail::dropout_matrix(out.input, dropout, rng, nullptr);
  out.logits.assign(static_cast<std::size_t>(t), 0.0);
  const std::size_t d = static_cast<std::size_t>(probe.dims.d);
  const double* hi = out.input.row(static_cast<std::size_t>(i - 1));

  if (probe.family == ProbeFamily::bilinear) {
    const std::vector<double> rhi = matvec(probe.tensor("R"), std::span(hi, d));
    const std::vector<double> a_hi = matvec(probe.tensor("L"), rhi);
    const double b = probe.tensor("b")(0, 0);
    for (int j = 0; j < t; ++j) {
      const double* hj = out.input.row(static_cast<std::size_t>(j));
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += hj[c] * a_hi[c];
      out.logits[static_cast<std::size_t>(j)] = acc + b;
    }
    return out;
  }

  const Matrix& w1 = probe.tensor("W1");
  const Matrix& b1 = probe.tensor("b1");
  const std::size_t l = w1.rows();
  std::vector<double> pair(2 * d), a1(l);
  for (int j = 0; j < t; ++j) {
    const double* hj = out.input.row(static_cast<std::size_t>(j));
    std::copy(hj, hj + d, pair.begin());
    std::copy(hi, hi + d, pair.begin() + static_cast<std::ptrdiff_t>(d));
    a1 = matvec(w1, pair);
    for (std::size_t u = 0; u < l; ++u) a1[u] = std::max(0.0, a1[u] + b1(0, u));
    std::vector<double> h1 = apply_dropout(a1, dropout, rng);
    if (probe.family == ProbeFamily::mlp1) {
      const Matrix& w2 = probe.tensor("W2");
      double s = probe.tensor("b2")(0, 0);
      for (std::size_t u = 0; u < l; ++u) s += w2(0, u) * h1[u];
      out.logits[static_cast<std::size_t>(j)] = s;
    } else {
      const Matrix& w2 = probe.tensor("W2");
      const Matrix& b2 = probe.tensor("b2");
      std::vector<double> a2 = matvec(w2, h1);
      for (std::size_t u = 0; u < a2.size(); ++u) a2[u] = std::max(0.0, a2[u] + b2(0, u));
      std::vector<double> h2 = apply_dropout(a2, dropout, rng);
      const Matrix& w3 = probe.tensor("W3");
      double s = probe.tensor("b3")(0, 0);
      for (std::size_t u = 0; u < h2.size(); ++u) s += w3(0, u) * h2[u];
      out.logits[static_cast<std::size_t>(j)] = s;
    }
  }
  return out;
}

// --- batched loss and analytic gradients ----------------------------------

struct PosBatch {
  Matrix x;               // B x d inputs, one row per token
  std::vector<int> gold;  // 1..k
};

// All head decisions of one sentence: (position i, gold head), both 1-based.
struct DepSentenceExamples {
  const Matrix* h = nullptr;  // T x d
  std::vector<std::pair<int, int>> decisions;
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Matrix> grads;  // aligned with ProbeParams::tensors
  std::size_t examples = 0;
};

namespace detail {

// Row-wise softmax cross-entropy. Fills dlogits with (p - onehot)/denom and
// returns the summed per-row loss.
inline double softmax_xent_rows(const Matrix& logits, std::span<const int> gold, double denom,
                                Matrix& dlogits) {
  const std::size_t rows = logits.rows(), k = logits.cols();
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const int g = gold[i];
    if (g < 1 || g > static_cast<int>(k))
      throw std::out_of_range("gold index " + std::to_string(g) + " out of range 1.." +
                              std::to_string(k));
    const double* row = logits.row(i);
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    const double lse = m + std::log(sum);
    loss_sum += lse - row[static_cast<std::size_t>(g) - 1];
    double* drow = dlogits.row(i);
    for (std::size_t j = 0; j < k; ++j) drow[j] = std::exp(row[j] - lse) / denom;
    drow[static_cast<std::size_t>(g) - 1] -= 1.0 / denom;
  }
  return loss_sum;
}

inline void add_weight_decay(const ProbeParams& probe, double weight_decay, double& loss,
                             std::vector<Matrix>& grads) {
  if (weight_decay == 0.0) return;
  double norm_sq = 0.0;
  for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
    const auto src = probe.tensors[t].flat();
    auto g = grads[t].flat();
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      g[idx] += weight_decay * src[idx];
      norm_sq += src[idx] * src[idx];
    }
  }
  loss += 0.5 * weight_decay * norm_sq;
}

}  // namespace detail

// Mean cross-entropy over the batch plus weight_decay * ||params||^2 / 2
// added once per step (the regularizer is not normalized by batch size);
// gradients are analytic and accumulate in a fixed order.
inline LossAndGrads loss_and_grad(const ProbeParams& probe, const PosBatch& batch,
                                  const DropoutSpec& dropout, double weight_decay, Rng* rng) {
  if (probe.task != TaskKind::pos) throw std::invalid_argument("loss_and_grad: not a POS probe");
  const std::size_t bsize = batch.x.rows();
  if (bsize == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (batch.gold.size() != bsize)
    throw std::invalid_argument("loss_and_grad: gold labels misaligned with inputs");
  if (batch.x.cols() != static_cast<std::size_t>(probe.dims.d))
    throw std::invalid_argument("loss_and_grad: input dimension mismatch");

  LossAndGrads out;
  out.examples = bsize;
  out.grads.reserve(probe.tensors.size());
  for (const Matrix& t : probe.tensors) out.grads.emplace_back(t.rows(), t.cols());

  Matrix xd = batch.x;
  detail::dropout_matrix(xd, dropout, rng, nullptr);
  const bool drop = dropout.active();
  const std::size_t k = static_cast<std::size_t>(probe.dims.k);

  if (probe.family == ProbeFamily::linear) {
    const Matrix& low = probe.tensor("L");
    const Matrix& right = probe.tensor("R");
    Matrix z(bsize, right.rows());
    gemm_nt(xd, right, z);
    Matrix logits(bsize, k);
    gemm_nt(z, low, logits);
    add_row_inplace(logits, probe.tensor("b").flat());

    Matrix dlogits(bsize, k);
    out.loss = detail::softmax_xent_rows(logits, batch.gold, static_cast<double>(bsize), dlogits) /
               static_cast<double>(bsize);

    gemm_tn(dlogits, z, out.grads[0]);                      // dL
    Matrix dz(bsize, right.rows());
    gemm_nn(dlogits, low, dz);
    gemm_tn(dz, xd, out.grads[1]);                          // dR
    const std::vector<double> db = column_sums(dlogits);    // db
    std::copy(db.begin(), db.end(), out.grads[2].flat().begin());
    detail::add_weight_decay(probe, weight_decay, out.loss, out.grads);
    return out;
  }

  // MLP-1 / MLP-2
  const Matrix& w1 = probe.tensor("W1");
  Matrix a1(bsize, w1.rows());
  gemm_nt(xd, w1, a1);
  add_row_inplace(a1, probe.tensor("b1").flat());
  Matrix h1 = a1;
  relu_inplace(h1);
  Matrix mask1;
  detail::dropout_matrix(h1, dropout, rng, &mask1);

  const bool two_layers = probe.family == ProbeFamily::mlp2;
  Matrix a2, h2, mask2;
  const Matrix& w_out = two_layers ? probe.tensor("W3") : probe.tensor("W2");
  const Matrix& b_out = two_layers ? probe.tensor("b3") : probe.tensor("b2");
  const Matrix* top_hidden = &h1;
  if (two_layers) {
    const Matrix& w2 = probe.tensor("W2");
    a2 = Matrix(bsize, w2.rows());
    gemm_nt(h1, w2, a2);
    add_row_inplace(a2, probe.tensor("b2").flat());
    h2 = a2;
    relu_inplace(h2);
    detail::dropout_matrix(h2, dropout, rng, &mask2);
    top_hidden = &h2;
  }

  Matrix logits(bsize, k);
  gemm_nt(*top_hidden, w_out, logits);
  add_row_inplace(logits, b_out.flat());

  Matrix dlogits(bsize, k);
  out.loss = detail::softmax_xent_rows(logits, batch.gold, static_cast<double>(bsize), dlogits) /
             static_cast<double>(bsize);

  const std::size_t g_out = two_layers ? 4 : 2;  // index of the output weight tensor
  gemm_tn(dlogits, *top_hidden, out.grads[g_out]);
  {
    const std::vector<double> db = column_sums(dlogits);
    std::copy(db.begin(), db.end(), out.grads[g_out + 1].flat().begin());
  }

  Matrix dtop(bsize, w_out.cols());
  gemm_nn(dlogits, w_out, dtop);

  if (two_layers) {
    detail::scale_by_mask(dtop, mask2, !drop);
    relu_backward_inplace(dtop, a2);
    gemm_tn(dtop, h1, out.grads[2]);  // dW2
    const std::vector<double> db2 = column_sums(dtop);
    std::copy(db2.begin(), db2.end(), out.grads[3].flat().begin());
    Matrix dh1(bsize, probe.tensor("W2").cols());
    gemm_nn(dtop, probe.tensor("W2"), dh1);
    dtop = std::move(dh1);
  }

  detail::scale_by_mask(dtop, mask1, !drop);
  relu_backward_inplace(dtop, a1);
  gemm_tn(dtop, xd, out.grads[0]);  // dW1
  const std::vector<double> db1 = column_sums(dtop);
  std::copy(db1.begin(), db1.end(), out.grads[1].flat().begin());

  detail::add_weight_decay(probe, weight_decay, out.loss, out.grads);
  return out;
}

inline LossAndGrads loss_and_grad(const ProbeParams& probe,
                                  std::span<const DepSentenceExamples> batch,
                                  const DropoutSpec& dropout, double weight_decay, Rng* rng) {
  if (probe.task != TaskKind::dep)
    throw std::invalid_argument("loss_and_grad: not a dependency probe");
  std::size_t total = 0;
  for (const DepSentenceExamples& s : batch) total += s.decisions.size();
  if (total == 0) throw std::invalid_argument("loss_and_grad: empty batch");

  LossAndGrads out;
  out.examples = total;
  out.grads.reserve(probe.tensors.size());
  for (const Matrix& t : probe.tensors) out.grads.emplace_back(t.rows(), t.cols());
  const double denom = static_cast<double>(total);
  const std::size_t d = static_cast<std::size_t>(probe.dims.d);
  const bool drop = dropout.active();
  double loss_sum = 0.0;

  for (const DepSentenceExamples& sent : batch) {
    const Matrix& h_raw = *sent.h;
    const std::size_t t = h_raw.rows();
    if (h_raw.cols() != d) throw std::invalid_argument("loss_and_grad: input dimension mismatch");
    for (const auto& [i, g] : sent.decisions) {
      if (i < 1 || i > static_cast<int>(t))
        throw std::out_of_range("decision position " + std::to_string(i) + " outside sentence");
      if (g < 1 || g > static_cast<int>(t))
        throw std::out_of_range("gold index " + std::to_string(g) + " out of range 1.." +
                                std::to_string(t));
    }
    Matrix hd = h_raw;
    detail::dropout_matrix(hd, dropout, rng, nullptr);

    if (probe.family == ProbeFamily::bilinear) {
      const Matrix& low = probe.tensor("L");
      const Matrix& right = probe.tensor("R");
      const std::size_t l = low.cols();
      Matrix p1(t, l), p2(t, l);
      gemm_nn(hd, low, p1);
      gemm_nt(hd, right, p2);
      Matrix scores(t, t);
      gemm_nt(p1, p2, scores);
      const double b = probe.tensor("b")(0, 0);

      Matrix dscores(t, t);
      std::vector<int> gold_one(1);
      Matrix logits_row(1, t), dlogits_row(1, t);
      double db = 0.0;
      for (const auto& [i, g] : sent.decisions) {
        for (std::size_t j = 0; j < t; ++j)
          logits_row(0, j) = scores(j, static_cast<std::size_t>(i - 1)) + b;
        gold_one[0] = g;
        loss_sum += detail::softmax_xent_rows(logits_row, gold_one, denom, dlogits_row);
        for (std::size_t j = 0; j < t; ++j) {
          dscores(j, static_cast<std::size_t>(i - 1)) += dlogits_row(0, j);
          db += dlogits_row(0, j);
        }
      }
      out.grads[2](0, 0) += db;
      Matrix dp1(t, l), dp2(t, l);
      gemm_nn(dscores, p2, dp1);
      gemm_tn(dscores, p1, dp2);
      gemm_tn(hd, dp1, out.grads[0], true);  // dL
      gemm_tn(dp2, hd, out.grads[1], true);  // dR
      continue;
    }

    // Dependency MLPs. W1 [h_j ; h_i] splits into W1a h_j + W1b h_i, so the
    // affine part costs O(T d l) and only the elementwise pair work is T^2.
    const Matrix& w1 = probe.tensor("W1");
    const std::size_t l = w1.rows();
    Matrix w1a(l, d), w1b(l, d);
    for (std::size_t u = 0; u < l; ++u) {
      const double* src = w1.row(u);
      std::copy(src, src + d, w1a.row(u));
      std::copy(src + d, src + 2 * d, w1b.row(u));
    }
    Matrix ga(t, l), gb(t, l);
    gemm_nt(hd, w1a, ga);
    gemm_nt(hd, w1b, gb);
    const Matrix& b1 = probe.tensor("b1");
    const bool two_layers = probe.family == ProbeFamily::mlp2;
    const Matrix& w_out = two_layers ? probe.tensor("W3") : probe.tensor("W2");
    const double b_out = two_layers ? probe.tensor("b3")(0, 0) : probe.tensor("b2")(0, 0);

    Matrix da1_sum(t, l);            // sum over decisions of dA1, for dW1a
    std::vector<double> logits(t);
    Matrix a1(t, l), h1(t, l), mask1, a2, h2, mask2, dtop(t, l);
    for (const auto& [i, g] : sent.decisions) {
      const double* gbi = gb.row(static_cast<std::size_t>(i - 1));
      for (std::size_t j = 0; j < t; ++j) {
        const double* garow = ga.row(j);
        double* a1row = a1.row(j);
        for (std::size_t u = 0; u < l; ++u) a1row[u] = garow[u] + gbi[u] + b1(0, u);
      }
      h1 = a1;
      relu_inplace(h1);
      detail::dropout_matrix(h1, dropout, rng, &mask1);

      const Matrix* top = &h1;
      if (two_layers) {
        const Matrix& w2 = probe.tensor("W2");
        a2 = Matrix(t, l);
        gemm_nt(h1, w2, a2);
        add_row_inplace(a2, probe.tensor("b2").flat());
        h2 = a2;
        relu_inplace(h2);
        detail::dropout_matrix(h2, dropout, rng, &mask2);
        top = &h2;
      }
      for (std::size_t j = 0; j < t; ++j) {
        const double* trow = top->row(j);
        double s = b_out;
        for (std::size_t u = 0; u < l; ++u) s += w_out(0, u) * trow[u];
        logits[j] = s;
      }

      // backward for this decision
      Matrix logits_row(1, t), dlogits_row(1, t);
      std::copy(logits.begin(), logits.end(), logits_row.flat().begin());
      std::vector<int> gold_one{g};
      loss_sum += detail::softmax_xent_rows(logits_row, gold_one, denom, dlogits_row);

      const std::size_t g_out = two_layers ? 4 : 2;
      double db_out = 0.0;
      for (std::size_t j = 0; j < t; ++j) db_out += dlogits_row(0, j);
      out.grads[g_out + 1](0, 0) += db_out;
      for (std::size_t j = 0; j < t; ++j) {
        const double ds = dlogits_row(0, j);
        if (ds == 0.0) continue;
        const double* trow = top->row(j);
        double* gw = out.grads[g_out].row(0);
        for (std::size_t u = 0; u < l; ++u) gw[u] += ds * trow[u];
      }
      for (std::size_t j = 0; j < t; ++j) {
        const double ds = dlogits_row(0, j);
        double* drow = dtop.row(j);
        for (std::size_t u = 0; u < l; ++u) drow[u] = ds * w_out(0, u);
      }
      if (two_layers) {
        detail::scale_by_mask(dtop, mask2, !drop);
        relu_backward_inplace(dtop, a2);
        gemm_tn(dtop, h1, out.grads[2], true);  // dW2
        const std::vector<double> db2 = column_sums(dtop);
        for (std::size_t u = 0; u < l; ++u) out.grads[3](0, u) += db2[u];
        Matrix dh1(t, l);
        gemm_nn(dtop, probe.tensor("W2"), dh1);
        dtop = std::move(dh1);
      }
      detail::scale_by_mask(dtop, mask1, !drop);
      relu_backward_inplace(dtop, a1);
      const std::vector<double> db1 = column_sums(dtop);
      for (std::size_t u = 0; u < l; ++u) out.grads[1](0, u) += db1[u];
      for (std::size_t j = 0; j < t; ++j) {
        const double* drow = dtop.row(j);
        double* arow = da1_sum.row(j);
        for (std::size_t u = 0; u < l; ++u) arow[u] += drow[u];
      }
      // dW1b: the i-side gradient is (sum_j dA1[j]) outer h_i
      const double* hi = hd.row(static_cast<std::size_t>(i - 1));
      for (std::size_t u = 0; u < l; ++u) {
        double acc = db1[u];
        if (acc == 0.0) continue;
        double* grow = out.grads[0].row(u);
        for (std::size_t c = 0; c < d; ++c) grow[d + c] += acc * hi[c];
      }
    }
    // dW1a accumulated across decisions: da1_sum^T * Hd
    Matrix dw1a(l, d);
    gemm_tn(da1_sum, hd, dw1a);
    for (std::size_t u = 0; u < l; ++u) {
      const double* src = dw1a.row(u);
      double* grow = out.grads[0].row(u);
      for (std::size_t c = 0; c < d; ++c) grow[c] += src[c];
    }
  }

  out.loss = loss_sum / denom;
  detail::add_weight_decay(probe, weight_decay, out.loss, out.grads);
  return out;
}

// --- batched eval-mode forward passes --------------------------------------

// Logits for a block of token vectors, one row per token. Eval mode: no
// dropout, no rng.
inline Matrix batched_forward_pos(const ProbeParams& probe, const Matrix& x) {
  if (probe.task != TaskKind::pos) throw std::invalid_argument("batched_forward_pos: not a POS probe");
  if (x.cols() != static_cast<std::size_t>(probe.dims.d))
    throw std::invalid_argument("batched_forward_pos: input dimension mismatch");
  const std::size_t bsize = x.rows();
  const std::size_t k = static_cast<std::size_t>(probe.dims.k);
  Matrix logits(bsize, k);
  if (probe.family == ProbeFamily::linear) {
    Matrix z(bsize, probe.tensor("R").rows());
    gemm_nt(x, probe.tensor("R"), z);
    gemm_nt(z, probe.tensor("L"), logits);
    add_row_inplace(logits, probe.tensor("b").flat());
    return logits;
  }
  Matrix h(bsize, probe.tensor("W1").rows());
  gemm_nt(x, probe.tensor("W1"), h);
  add_row_inplace(h, probe.tensor("b1").flat());
  relu_inplace(h);
  if (probe.family == ProbeFamily::mlp2) {
    Matrix h2(bsize, probe.tensor("W2").rows());
    gemm_nt(h, probe.tensor("W2"), h2);
    add_row_inplace(h2, probe.tensor("b2").flat());
    relu_inplace(h2);
    h = std::move(h2);
  }
  const Matrix& w_out = probe.family == ProbeFamily::mlp2 ? probe.tensor("W3") : probe.tensor("W2");
  const Matrix& b_out = probe.family == ProbeFamily::mlp2 ? probe.tensor("b3") : probe.tensor("b2");
  gemm_nt(h, w_out, logits);
  add_row_inplace(logits, b_out.flat());
  return logits;
}

// Score matrix S with S(j,i) = score that j is the head of i, for all pairs
// of one sentence. Column i is the logit vector for decision i. Eval mode.
inline Matrix batched_forward_dep_scores(const ProbeParams& probe, const Matrix& h_seq) {
  if (probe.task != TaskKind::dep)
    throw std::invalid_argument("batched_forward_dep_scores: not a dependency probe");
  if (h_seq.cols() != static_cast<std::size_t>(probe.dims.d))
    throw std::invalid_argument("batched_forward_dep_scores: input dimension mismatch");
  const std::size_t t = h_seq.rows();
  const std::size_t d = h_seq.cols();
  Matrix scores(t, t);

  if (probe.family == ProbeFamily::bilinear) {
    const Matrix& low = probe.tensor("L");
    const Matrix& right = probe.tensor("R");
    Matrix p1(t, low.cols()), p2(t, right.rows());
    gemm_nn(h_seq, low, p1);
    gemm_nt(h_seq, right, p2);
    gemm_nt(p1, p2, scores);
    const double b = probe.tensor("b")(0, 0);
    for (double& s : scores.flat()) s += b;
    return scores;
  }

  const Matrix& w1 = probe.tensor("W1");
  const std::size_t l = w1.rows();
  Matrix w1a(l, d), w1b(l, d);
  for (std::size_t u = 0; u < l; ++u) {
    const double* src = w1.row(u);
    std::copy(src, src + d, w1a.row(u));
    std::copy(src + d, src + 2 * d, w1b.row(u));
  }
  Matrix ga(t, l), gb(t, l);
  gemm_nt(h_seq, w1a, ga);
  gemm_nt(h_seq, w1b, gb);
  const Matrix& b1 = probe.tensor("b1");
  const bool two_layers = probe.family == ProbeFamily::mlp2;
  const Matrix& w_out = two_layers ? probe.tensor("W3") : probe.tensor("W2");
  const double b_out = two_layers ? probe.tensor("b3")(0, 0) : probe.tensor("b2")(0, 0);

  Matrix h1(t, l), h2;
  for (std::size_t i = 0; i < t; ++i) {
    const double* gbi = gb.row(i);
    for (std::size_t j = 0; j < t; ++j) {
      const double* garow = ga.row(j);
      double* hrow = h1.row(j);
      for (std::size_t u = 0; u < l; ++u) hrow[u] = std::max(0.0, garow[u] + gbi[u] + b1(0, u));
    }
    const Matrix* top = &h1;
    if (two_layers) {
      h2 = Matrix(t, l);
      gemm_nt(h1, probe.tensor("W2"), h2);
      add_row_inplace(h2, probe.tensor("b2").flat());
      relu_inplace(h2);
      top = &h2;
    }
    for (std::size_t j = 0; j < t; ++j) {
      const double* trow = top->row(j);
      double s = b_out;
      for (std::size_t u = 0; u < l; ++u) s += w_out(0, u) * trow[u];
      scores(j, i) = s;
    }
  }
  return scores;
}

// --- checkpoints ----------------------------------------------------------
//
// <prefix>.json manifest (family, task, dims, init seed, tensor shapes) and
// <prefix>.bin with magic "PFC1" followed per tensor by u32 rows, u32 cols
// and row-major float64 values, little-endian.

inline void save_checkpoint(const ProbeParams& params, const std::string& prefix) {
  nlohmann::json manifest;
  manifest["format"] = "probeforge-checkpoint";
  manifest["version"] = 1;
  manifest["family"] = family_name(params.family);
  manifest["task"] = task_name(params.task);
  manifest["dims"] = {{"k", params.dims.k}, {"d", params.dims.d}, {"l", params.dims.l}};
  manifest["init_seed"] = params.init_seed;
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t t = 0; t < params.tensors.size(); ++t)
    tensors.push_back({{"name", params.names[t]},
                       {"rows", params.tensors[t].rows()},
                       {"cols", params.tensors[t].cols()}});
  manifest["tensors"] = std::move(tensors);

  std::ofstream mf(prefix + ".json");
  if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
  mf << manifest.dump(2) << '\n';

  std::ofstream bf(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!bf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".bin");
  bf.write("PFC1", 4);
  detail::put_u32(bf, 1);
  detail::put_u32(bf, static_cast<std::uint32_t>(params.tensors.size()));
  for (const Matrix& t : params.tensors) {
    detail::put_u32(bf, static_cast<std::uint32_t>(t.rows()));
    detail::put_u32(bf, static_cast<std::uint32_t>(t.cols()));
    for (double x : t.flat()) detail::put_f64(bf, x);
  }
  if (!bf) throw std::runtime_error("save_checkpoint: write failed for " + prefix + ".bin");
}

inline ProbeParams load_checkpoint(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  ProbeParams params;
  params.family = family_from_name(manifest.at("family").get<std::string>());
  params.task = task_from_name(manifest.at("task").get<std::string>());
  params.dims.k = manifest.at("dims").at("k").get<int>();
  params.dims.d = manifest.at("dims").at("d").get<int>();
  params.dims.l = manifest.at("dims").at("l").get<int>();
  params.init_seed = manifest.at("init_seed").get<std::uint64_t>();

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".bin");
  std::uint64_t pos = 0;
  char header[12];
  detail::read_exact(bf, header, 12, pos, "checkpoint header");
  if (std::memcmp(header, "PFC1", 4) != 0) throw ReprIoError(0, "bad checkpoint magic");
  if (detail::get_u32(header + 4) != 1) throw ReprIoError(4, "unsupported checkpoint version");
  const std::uint32_t count = detail::get_u32(header + 8);
  if (count != manifest.at("tensors").size())
    throw std::runtime_error("load_checkpoint: manifest/binary tensor count mismatch");

  std::vector<char> buffer;
  for (std::uint32_t t = 0; t < count; ++t) {
    char shape[8];
    detail::read_exact(bf, shape, 8, pos, "tensor shape");
    const std::uint32_t rows = detail::get_u32(shape);
    const std::uint32_t cols = detail::get_u32(shape + 4);
    const auto& meta = manifest.at("tensors").at(t);
    if (rows != meta.at("rows").get<std::uint32_t>() || cols != meta.at("cols").get<std::uint32_t>())
      throw std::runtime_error("load_checkpoint: tensor '" + meta.at("name").get<std::string>() +
                               "' shape mismatch");
    params.names.push_back(meta.at("name").get<std::string>());
    Matrix m(rows, cols);
    buffer.resize(8ull * rows * cols);
    detail::read_exact(bf, buffer.data(), buffer.size(), pos, "tensor data");
    for (std::size_t idx = 0; idx < m.size(); ++idx)
      m.flat()[idx] = detail::get_f64(buffer.data() + 8 * idx);
    params.tensors.push_back(std::move(m));
  }
  return params;
}

}  // namespace probeforge
