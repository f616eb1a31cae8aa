// SPDX-License-Identifier: Apache-2.0
#include "ssb/numerics/tape.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "ssb/common/error.hpp"
#include "ssb/numerics/kernels.hpp"
#include "ssb/numerics/prob.hpp"

namespace ssb::numerics {
namespace {

std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

const Tensor& empty_tensor() {
  static const Tensor t;
  return t;
}

void expect(bool cond, const std::string& what) {
  if (!cond) fail(Errc::invalid_argument, what);
}

}  // namespace

Tape::Tape() : id_(next_tape_id()) {}

const Tape::Node& Tape::node(Var v) const {
  if (!owns(v)) fail(Errc::invalid_state, "variable does not belong to this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (!owns(v)) fail(Errc::invalid_state, "variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::leaf(Tensor value, bool trainable) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = trainable;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1), id_};
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || node(p).requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1), id_};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.shape.empty() ? empty_tensor() : n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.shape.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!node(v).requires_grad) return;
  Tensor& buf = grad_buffer(v);
  for (std::size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
}

void Tape::backward(Var loss) {
  if (!owns(loss)) fail(Errc::invalid_state, "loss was not produced on this tape");
  if (nodes_[loss.id].value.numel() != 1)
    fail(Errc::invalid_state, "loss must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss).data[0] = 1.0f;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.shape.empty()) continue;
    n.backward(*this, n.grad);
  }
}

namespace rowops {

void linear(const float* x, std::size_t k, const float* w, std::size_t m, float* out) {
  for (std::size_t j = 0; j < m; ++j) out[j] = 0.0f;
  kernels().gemv_acc(x, k, w, m, out);
}

float layernorm(const float* x, const float* gain, const float* bias, std::size_t d,
                float eps, float* out, float* xhat) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
  const float m = static_cast<float>(mean);
  for (std::size_t i = 0; i < d; ++i) {
    const float h = (x[i] - m) * rstd;
    if (xhat) xhat[i] = h;
    out[i] = h * gain[i] + bias[i];
  }
  return rstd;
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
}

float gelu(float x) {
  const float u = kGeluC * (x + 0.044715f * x * x * x);
  return 0.5f * x * (1.0f + std::tanh(u));
}

float gelu_grad(float x) {
  const float u = kGeluC * (x + 0.044715f * x * x * x);
  const float th = std::tanh(u);
  const float du = kGeluC * (1.0f + 3.0f * 0.044715f * x * x);
  return 0.5f * (1.0f + th) + 0.5f * x * (1.0f - th * th) * du;
}

void attention(const float* q, const float* k, const float* v, std::size_t n_keys,
               std::size_t d, std::size_t heads, float* out, float* probs) {
  const auto& kt = kernels();
  const std::size_t hd = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  for (std::size_t j = 0; j < d; ++j) out[j] = 0.0f;
  for (std::size_t h = 0; h < heads; ++h) {
    float* p = probs + h * n_keys;
    const float* qh = q + h * hd;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < n_keys; ++j) {
      p[j] = kt.dot(qh, k + j * d + h * hd, hd) * scale;
      mx = std::max(mx, p[j]);
    }
    float sum = 0.0f;
    for (std::size_t j = 0; j < n_keys; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    const float inv = 1.0f / sum;
    float* oh = out + h * hd;
    for (std::size_t j = 0; j < n_keys; ++j) {
      p[j] *= inv;
      kt.axpy(p[j], v + j * d + h * hd, oh, hd);
    }
  }
}

}  // namespace rowops

namespace ops {

Var matmul(Tape& t, Var x, Var w) {
  const Tensor& X = t.value(x);
  const Tensor& W = t.value(w);
  expect(X.rank() == 2 && W.rank() == 2 && X.cols() == W.rows(),
         "matmul: shape mismatch " + shape_str(X.shape) + " * " + shape_str(W.shape));
  const std::size_t n = X.rows(), k = X.cols(), m = W.cols();
  Tensor Y({n, m});
  for (std::size_t i = 0; i < n; ++i) rowops::linear(&X.data[i * k], k, W.data.data(), m, &Y.data[i * m]);
  const Var parents[] = {x, w};
  return t.record(std::move(Y), parents, [x, w, n, k, m](Tape& tp, const Tensor& dY) {
    const auto& kt = kernels();
    const Tensor& X = tp.value(x);
    const Tensor& W = tp.value(w);
    if (tp.requires_grad(x)) {
      Tensor& dX = tp.grad_buffer(x);
      for (std::size_t i = 0; i < n; ++i)
        kt.gemv_t_acc(&dY.data[i * m], m, W.data.data(), k, &dX.data[i * k]);
    }
    if (tp.requires_grad(w)) {
      Tensor& dW = tp.grad_buffer(w);
      for (std::size_t i = 0; i < n; ++i)
        kt.outer_acc(&X.data[i * k], k, &dY.data[i * m], m, dW.data.data());
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  expect(A.same_shape(B), "add: shape mismatch");
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] += B.data[i];
  const Var parents[] = {a, b};
  return t.record(std::move(Y), parents, [a, b](Tape& tp, const Tensor& dY) {
    tp.accumulate(a, dY);
    tp.accumulate(b, dY);
  });
}

Var add_bias(Tape& t, Var x, Var b) {
  const Tensor& X = t.value(x);
  const Tensor& B = t.value(b);
  expect(X.rank() == 2 && B.numel() == X.cols(), "add_bias: shape mismatch");
  Tensor Y = X;
  const std::size_t n = X.rows(), m = X.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) Y.data[i * m + j] += B.data[j];
  const Var parents[] = {x, b};
  return t.record(std::move(Y), parents, [x, b, n, m](Tape& tp, const Tensor& dY) {
    tp.accumulate(x, dY);
    if (tp.requires_grad(b)) {
      Tensor& dB = tp.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) dB.data[j] += dY.data[i * m + j];
    }
  });
}

Var scale(Tape& t, Var x, float s) {
  Tensor Y = t.value(x);
  for (float& v : Y.data) v *= s;
  const Var parents[] = {x};
  return t.record(std::move(Y), parents, [x, s](Tape& tp, const Tensor& dY) {
    Tensor& dX = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dX.data.size(); ++i) dX.data[i] += s * dY.data[i];
  });
}

Var square(Tape& t, Var x) {
  Tensor Y = t.value(x);
  for (float& v : Y.data) v *= v;
  const Var parents[] = {x};
  return t.record(std::move(Y), parents, [x](Tape& tp, const Tensor& dY) {
    const Tensor& X = tp.value(x);
    Tensor& dX = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dX.data.size(); ++i) dX.data[i] += 2.0f * X.data[i] * dY.data[i];
  });
}

Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (float v : t.value(x).data) s += v;
  const Var parents[] = {x};
  return t.record(Tensor::scalar(static_cast<float>(s)), parents,
                  [x](Tape& tp, const Tensor& dY) {
                    Tensor& dX = tp.grad_buffer(x);
                    for (float& g : dX.data) g += dY.data[0];
                  });
}

Var layernorm(Tape& t, Var x, Var gain, Var bias, float eps) {
  const Tensor& X = t.value(x);
  const Tensor& G = t.value(gain);
  const Tensor& B = t.value(bias);
  expect(X.rank() == 2 && G.numel() == X.cols() && B.numel() == X.cols(),
         "layernorm: shape mismatch");
  const std::size_t n = X.rows(), d = X.cols();
  Tensor Y({n, d});
  auto xhat = std::make_shared<std::vector<float>>(n * d);
  auto rstd = std::make_shared<std::vector<float>>(n);
  for (std::size_t i = 0; i < n; ++i)
    (*rstd)[i] = rowops::layernorm(&X.data[i * d], G.data.data(), B.data.data(), d, eps,
                                   &Y.data[i * d], &xhat->data()[i * d]);
  const Var parents[] = {x, gain, bias};
  return t.record(std::move(Y), parents,
                  [x, gain, bias, n, d, xhat, rstd](Tape& tp, const Tensor& dY) {
                    const Tensor& G = tp.value(gain);
                    if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
                      Tensor& dG = tp.grad_buffer(gain);
                      Tensor& dB = tp.grad_buffer(bias);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) {
                          dG.data[j] += dY.data[i * d + j] * (*xhat)[i * d + j];
                          dB.data[j] += dY.data[i * d + j];
                        }
                    }
                    if (!tp.requires_grad(x)) return;
                    Tensor& dX = tp.grad_buffer(x);
                    std::vector<float> dh(d);
                    for (std::size_t i = 0; i < n; ++i) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = dY.data[i * d + j] * G.data[j];
                        m1 += dh[j];
                        m2 += dh[j] * (*xhat)[i * d + j];
                      }
                      m1 /= static_cast<double>(d);
                      m2 /= static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j)
                        dX.data[i * d + j] += (*rstd)[i] *
                            static_cast<float>(dh[j] - m1 - (*xhat)[i * d + j] * m2);
                    }
                  });
}

Var gelu(Tape& t, Var x) {
  Tensor Y = t.value(x);
  for (float& v : Y.data) v = rowops::gelu(v);
  const Var parents[] = {x};
  return t.record(std::move(Y), parents, [x](Tape& tp, const Tensor& dY) {
    const Tensor& X = tp.value(x);
    Tensor& dX = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dX.data.size(); ++i)
      dX.data[i] += dY.data[i] * rowops::gelu_grad(X.data[i]);
  });
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  const Tensor& T = t.value(table);
  expect(T.rank() == 2, "embedding: table must be 2-D");
  const std::size_t n = ids.size(), d = T.cols();
  Tensor Y({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    expect(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < T.rows(),
           "embedding: id " + std::to_string(ids[i]) + " out of range");
    const auto r = T.row(static_cast<std::size_t>(ids[i]));
    std::copy(r.begin(), r.end(), Y.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<int> saved(ids.begin(), ids.end());
  const Var parents[] = {table};
  return t.record(std::move(Y), parents,
                  [table, saved = std::move(saved), d](Tape& tp, const Tensor& dY) {
                    Tensor& dT = tp.grad_buffer(table);
                    for (std::size_t i = 0; i < saved.size(); ++i)
                      kernels().axpy(1.0f, &dY.data[i * d],
                                     &dT.data[static_cast<std::size_t>(saved[i]) * d], d);
                  });
}

Var causal_attention(Tape& t, Var q, Var k, Var v, std::size_t heads) {
  const Tensor& Q = t.value(q);
  const Tensor& K = t.value(k);
  const Tensor& V = t.value(v);
  expect(Q.rank() == 2 && Q.same_shape(K) && Q.same_shape(V),
         "causal_attention: q/k/v shape mismatch");
  const std::size_t n = Q.rows(), d = Q.cols();
  expect(heads > 0 && d % heads == 0, "causal_attention: width not divisible by heads");
  Tensor Y({n, d});
  // probs[i] holds heads x (i+1) weights for query row i.
  auto probs = std::make_shared<std::vector<std::vector<float>>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    (*probs)[i].resize(heads * (i + 1));
    rowops::attention(&Q.data[i * d], K.data.data(), V.data.data(), i + 1, d, heads,
                      &Y.data[i * d], (*probs)[i].data());
  }
  const Var parents[] = {q, k, v};
  return t.record(std::move(Y), parents, [q, k, v, n, d, heads, probs](Tape& tp, const Tensor& dY) {
    const auto& kt = kernels();
    const Tensor& Q = tp.value(q);
    const Tensor& K = tp.value(k);
    const Tensor& V = tp.value(v);
    Tensor dQ = Tensor::zeros_like(Q), dK = Tensor::zeros_like(K), dV = Tensor::zeros_like(V);
    const std::size_t hd = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<float> ds(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t nk = i + 1;
      for (std::size_t h = 0; h < heads; ++h) {
        const float* p = &(*probs)[i][h * nk];
        const float* go = &dY.data[i * d + h * hd];
        double dot_sum = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const float dp = kt.dot(go, &V.data[j * d + h * hd], hd);
          kt.axpy(p[j], go, &dV.data[j * d + h * hd], hd);
          ds[j] = dp;
          dot_sum += static_cast<double>(p[j]) * dp;
        }
        for (std::size_t j = 0; j < nk; ++j) {
          const float g = p[j] * (ds[j] - static_cast<float>(dot_sum)) * scale;
          kt.axpy(g, &K.data[j * d + h * hd], &dQ.data[i * d + h * hd], hd);
          kt.axpy(g, &Q.data[i * d + h * hd], &dK.data[j * d + h * hd], hd);
        }
      }
    }
    tp.accumulate(q, dQ);
    tp.accumulate(k, dK);
    tp.accumulate(v, dV);
  });
}

Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = t.value(x);
  expect(X.rank() == 2 && begin <= end && end <= X.rows(), "slice_rows: bad range");
  const std::size_t m = X.cols();
  Tensor Y({end - begin, m});
  std::copy(X.data.begin() + static_cast<std::ptrdiff_t>(begin * m),
            X.data.begin() + static_cast<std::ptrdiff_t>(end * m), Y.data.begin());
  const Var parents[] = {x};
  return t.record(std::move(Y), parents, [x, begin, m](Tape& tp, const Tensor& dY) {
    Tensor& dX = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dY.data.size(); ++i) dX.data[begin * m + i] += dY.data[i];
  });
}

Var softmax_rows(Tape& t, Var x, float temperature) {
  const Tensor& X = t.value(x);
  expect(X.rank() == 2, "softmax_rows: expected 2-D input");
  const std::size_t n = X.rows(), m = X.cols();
  auto Y = std::make_shared<Tensor>(std::vector<std::size_t>{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    auto p = softmax_t(X.row(i), temperature);
    std::copy(p.begin(), p.end(), Y->row(i).begin());
  }
  const Var parents[] = {x};
  Tensor out = *Y;
  return t.record(std::move(out), parents,
                  [x, Y, n, m, temperature](Tape& tp, const Tensor& dY) {
                    Tensor& dX = tp.grad_buffer(x);
                    for (std::size_t i = 0; i < n; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < m; ++j)
                        dot += static_cast<double>(dY.data[i * m + j]) * Y->data[i * m + j];
                      for (std::size_t j = 0; j < m; ++j)
                        dX.data[i * m + j] += static_cast<float>(
                            Y->data[i * m + j] * (dY.data[i * m + j] - dot) / temperature);
                    }
                  });
}

Var kd_loss(Tape& t, const Tensor& teacher, Var student, float temperature) {
  const Tensor& S = t.value(student);
  expect(teacher.rank() == 2 && S.rank() == 2 && teacher.same_shape(S),
         "kd_loss: teacher " + shape_str(teacher.shape) + " vs student " +
             shape_str(S.shape));
  expect(temperature > 0.0f, "kd_loss: temperature must be > 0");
  const std::size_t n = S.rows(), m = S.cols();
  if (n == 0) {
    const Var parents[] = {student};
    return t.record(Tensor::scalar(0.0f), parents, [](Tape&, const Tensor&) {});
  }
  // Gradient w.r.t. student logits: T * (q - p) / n.
  auto dlogits = std::make_shared<Tensor>(std::vector<std::size_t>{n, m});
  std::vector<double> lp(m), lq(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax_t(teacher.row(i), temperature, lp);
    log_softmax_t(S.row(i), temperature, lq);
    double kl = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double p = std::exp(lp[j]);
      const double q = std::exp(lq[j]);
      if (p > 0.0) kl += p * (lp[j] - lq[j]);
      dlogits->data[i * m + j] = static_cast<float>(temperature * (q - p) / static_cast<double>(n));
    }
    total += kl;
  }
  const double loss = static_cast<double>(temperature) * temperature * total / static_cast<double>(n);
  const Var parents[] = {student};
  return t.record(Tensor::scalar(static_cast<float>(loss)), parents,
                  [student, dlogits](Tape& tp, const Tensor& dY) {
                    Tensor& dS = tp.grad_buffer(student);
                    kernels().axpy(dY.data[0], dlogits->data.data(), dS.data.data(),
                                   dS.data.size());
                  });
}

Var cross_entropy_rows(Tape& t, Var logits, std::span<const int> targets) {
  const Tensor& L = t.value(logits);
  expect(L.rank() == 2 && targets.size() == L.rows(),
         "cross_entropy_rows: need one target per row");
  const std::size_t n = L.rows(), m = L.cols();
  std::size_t count = 0;
  for (int tg : targets) {
    expect(tg < static_cast<int>(m), "cross_entropy_rows: target " + std::to_string(tg) +
                                         " out of range");
    if (tg >= 0) ++count;
  }
  auto dlogits = std::make_shared<Tensor>(std::vector<std::size_t>{n, m});
  std::vector<double> lp(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0) continue;
    log_softmax_t(L.row(i), 1.0, lp);
    total -= lp[static_cast<std::size_t>(targets[i])];
    for (std::size_t j = 0; j < m; ++j) {
      const double g = std::exp(lp[j]) - (static_cast<int>(j) == targets[i] ? 1.0 : 0.0);
      dlogits->data[i * m + j] = static_cast<float>(g / static_cast<double>(count));
    }
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  const Var parents[] = {logits};
  return t.record(Tensor::scalar(static_cast<float>(loss)), parents,
                  [logits, dlogits](Tape& tp, const Tensor& dY) {
                    Tensor& dL = tp.grad_buffer(logits);
                    kernels().axpy(dY.data[0], dlogits->data.data(), dL.data.data(),
                                   dL.data.size());
                  });
}

Var mean(Tape& t, std::span<const Var> scalars) {
  expect(!scalars.empty(), "mean: no inputs");
  double s = 0.0;
  for (const Var& v : scalars) {
    expect(t.value(v).numel() == 1, "mean: inputs must be scalars");
    s += t.value(v).data[0];
  }
  const float inv = 1.0f / static_cast<float>(scalars.size());
  std::vector<Var> saved(scalars.begin(), scalars.end());
  return t.record(Tensor::scalar(static_cast<float>(s / static_cast<double>(scalars.size()))),
                  scalars, [saved, inv](Tape& tp, const Tensor& dY) {
                    for (const Var& v : saved)
                      if (tp.requires_grad(v)) tp.grad_buffer(v).data[0] += inv * dY.data[0];
                  });
}

}  // namespace ops
}  // namespace ssb::numerics
