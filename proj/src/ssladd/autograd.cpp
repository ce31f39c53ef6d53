// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace ssladd::ag {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Strided = Eigen::OuterStride<>;
using MapS = Eigen::Map<MatR, 0, Strided>;
using CMapS = Eigen::Map<const MatR, 0, Strided>;

CMapR AsMat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapR(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapR AsMat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapR(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void RequireRank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    Fail(ErrorCategory::kInvalidArgument, std::string(op) + ": expected rank " + std::to_string(rank) +
                                              " tensor, got " + ShapeString(t.shape()));
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    Fail(ErrorCategory::kInvalidArgument,
         std::string(op) + ": shape mismatch " + ShapeString(a.shape()) + " vs " + ShapeString(b.shape()));
}

void Accumulate(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <class F>
Var Unary(Var a, F&& f, std::function<double(double x, double y)> deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->Record(std::move(y), {a}, [a, deriv](Tape& t, std::uint32_t self) {
    if (!a.requires_grad()) return;
    const Tensor& g = t.grad(self);
    const Tensor& x = a.value();
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad(a.id);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * deriv(x[i], y[i]);
  });
}

// Column buffer for a 3x3 same-padded convolution: [c*9 x h*w].
MatR Im2Col3x3(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  MatR cols = MatR::Zero(static_cast<Eigen::Index>(c * 9), static_cast<Eigen::Index>(h * w));
  for (std::size_t ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = static_cast<Eigen::Index>(ci * 9 + ky * 3 + kx);
        for (std::size_t i = 0; i < h; ++i) {
          const long si = static_cast<long>(i) + ky - 1;
          if (si < 0 || si >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < w; ++j) {
            const long sj = static_cast<long>(j) + kx - 1;
            if (sj < 0 || sj >= static_cast<long>(w)) continue;
            cols(row, static_cast<Eigen::Index>(i * w + j)) = x[(ci * h + si) * w + sj];
          }
        }
      }
  return cols;
}

void Col2Im3x3(const MatR& cols, Tensor& dx) {
  const std::size_t c = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = static_cast<Eigen::Index>(ci * 9 + ky * 3 + kx);
        for (std::size_t i = 0; i < h; ++i) {
          const long si = static_cast<long>(i) + ky - 1;
          if (si < 0 || si >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < w; ++j) {
            const long sj = static_cast<long>(j) + kx - 1;
            if (sj < 0 || sj >= static_cast<long>(w)) continue;
            dx[(ci * h + si) * w + sj] += cols(row, static_cast<Eigen::Index>(i * w + j));
          }
        }
      }
}

}  // namespace

// ---- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::Push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::Constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return Push(std::move(n));
}

Var Tape::Leaf(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  return Push(std::move(n));
}

Var Tape::Param(const Tensor& value, std::size_t param_id, bool requires_grad) {
  Node n;
  n.ref = &value;
  n.param_id = static_cast<std::int64_t>(param_id);
  n.requires_grad = grad_enabled_ && requires_grad;
  return Push(std::move(n));
}

Var Tape::Record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return Record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::Record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents)
      if (nodes_[p.id].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return Push(std::move(n));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

const Tensor* Tape::grad_or_null(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::Backward(Var root) {
  if (!grad_enabled_) Fail(ErrorCategory::kState, "backward on a tape with gradients disabled");
  if (value(root.id).size() != 1) Fail(ErrorCategory::kInvalidArgument, "backward root must be a scalar");
  if (!nodes_[root.id].requires_grad) return;
  grad(root.id)[0] += 1.0;
  for (std::int64_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && !n.grad.empty()) n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

std::vector<std::pair<std::size_t, Tensor>> Tape::ParamGrads() const {
  std::vector<std::pair<std::size_t, Tensor>> out;
  for (const Node& n : nodes_) {
    if (n.param_id < 0 || n.grad.empty()) continue;
    const auto id = static_cast<std::size_t>(n.param_id);
    auto it = std::find_if(out.begin(), out.end(), [id](const auto& p) { return p.first == id; });
    if (it == out.end())
      out.emplace_back(id, n.grad);
    else
      Accumulate(it->second, n.grad);
  }
  return out;
}

// ---- elementwise ------------------------------------------------------------

Var Add(Var a, Var b) {
  RequireSameShape(a.value(), b.value(), "Add");
  Tensor y = a.value();
  Accumulate(y, b.value());
  return a.tape->Record(std::move(y), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (a.requires_grad()) Accumulate(t.grad(a.id), g);
    if (b.requires_grad()) Accumulate(t.grad(b.id), g);
  });
}

Var AddConstant(Var a, const Tensor& c) {
  RequireSameShape(a.value(), c, "AddConstant");
  Tensor y = a.value();
  Accumulate(y, c);
  return a.tape->Record(std::move(y), {a}, [a](Tape& t, std::uint32_t self) {
    Accumulate(t.grad(a.id), t.grad(self));
  });
}

Var Scale(Var a, double c) {
  Tensor y = a.value();
  for (double& v : y.values()) v *= c;
  return a.tape->Record(std::move(y), {a}, [a, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += c * g[i];
  });
}

Var ScaleBy(Var a, Var s, std::size_t index) {
  Require(index < s.value().size(), "ScaleBy: index out of range");
  const double k = s.value()[index];
  Tensor y = a.value();
  for (double& v : y.values()) v *= k;
  return a.tape->Record(std::move(y), {a, s}, [a, s, index](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const double k = s.value()[index];
    if (a.requires_grad()) {
      Tensor& dx = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += k * g[i];
    }
    if (s.requires_grad()) {
      const Tensor& x = a.value();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += x[i] * g[i];
      t.grad(s.id)[index] += acc;
    }
  });
}

Var Relu(Var a) {
  return Unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x >= 0.0 ? 1.0 : 0.0; });
}

Var Gelu(Var a) {
  return Unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Var Sigmoid(Var a) {
  return Unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---- linear algebra ---------------------------------------------------------

Var Linear(Var x, Var w, std::optional<Var> b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  RequireRank(X, 2, "Linear");
  RequireRank(W, 2, "Linear");
  const std::size_t n = X.dim(0), in = X.dim(1), out = W.dim(0);
  if (W.dim(1) != in)
    Fail(ErrorCategory::kInvalidArgument,
         "Linear: input " + ShapeString(X.shape()) + " incompatible with weight " + ShapeString(W.shape()));
  if (b && b->value().size() != out)
    Fail(ErrorCategory::kInvalidArgument, "Linear: bias size " + std::to_string(b->value().size()) +
                                              " does not match output width " + std::to_string(out));
  Tensor y({n, out});
  AsMat(y, n, out).noalias() = AsMat(X, n, in) * AsMat(W, out, in).transpose();
  if (b) {
    const Tensor& B = b->value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += B[j];
  }
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(*b);
  return x.tape->Record(std::move(y), parents, [x, w, b, n, in, out](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    auto G = AsMat(g, n, out);
    if (x.requires_grad()) AsMat(t.grad(x.id), n, in).noalias() += G * AsMat(w.value(), out, in);
    if (w.requires_grad()) AsMat(t.grad(w.id), out, in).noalias() += G.transpose() * AsMat(x.value(), n, in);
    if (b && b->requires_grad()) {
      Tensor& db = t.grad(b->id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) db[j] += g[i * out + j];
    }
  });
}

Var MatMul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  RequireRank(A, 2, "MatMul");
  RequireRank(B, 2, "MatMul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k)
    Fail(ErrorCategory::kInvalidArgument,
         "MatMul: " + ShapeString(A.shape()) + " times " + ShapeString(B.shape()));
  Tensor y({m, n});
  AsMat(y, m, n).noalias() = AsMat(A, m, k) * AsMat(B, k, n);
  return a.tape->Record(std::move(y), {a, b}, [a, b, m, k, n](Tape& t, std::uint32_t self) {
    auto G = AsMat(t.grad(self), m, n);
    if (a.requires_grad()) AsMat(t.grad(a.id), m, k).noalias() += G * AsMat(b.value(), k, n).transpose();
    if (b.requires_grad()) AsMat(t.grad(b.id), k, n).noalias() += AsMat(a.value(), m, k).transpose() * G;
  });
}

Var Transpose(Var a) {
  const Tensor& A = a.value();
  RequireRank(A, 2, "Transpose");
  const std::size_t r = A.dim(0), c = A.dim(1);
  Tensor y({c, r});
  AsMat(y, c, r) = AsMat(A, r, c).transpose();
  return a.tape->Record(std::move(y), {a}, [a, r, c](Tape& t, std::uint32_t self) {
    AsMat(t.grad(a.id), r, c) += AsMat(t.grad(self), c, r).transpose();
  });
}

Var Reshape(Var a, Shape shape) {
  Tensor y = a.value().Reshaped(std::move(shape));
  return a.tape->Record(std::move(y), {a}, [a](Tape& t, std::uint32_t self) {
    Accumulate(t.grad(a.id), t.grad(self));
  });
}

// ---- normalization / softmax -----------------------------------------------

Var LayerNorm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  RequireRank(X, 2, "LayerNorm");
  const std::size_t n = X.dim(0), d = X.dim(1);
  Require(gamma.value().size() == d && beta.value().size() == d, "LayerNorm: affine size mismatch");
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  Tensor y({n, d});
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = X.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      y[i * d + j] = G[j] * xhat[i * d + j] + B[j];
    }
  }
  return x.tape->Record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& G = gamma.value();
        if (gamma.requires_grad() || beta.requires_grad()) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              if (gamma.requires_grad()) t.grad(gamma.id)[j] += g[i * d + j] * xhat[i * d + j];
              if (beta.requires_grad()) t.grad(beta.id)[j] += g[i * d + j];
            }
        }
        if (!x.requires_grad()) return;
        Tensor& dx = t.grad(x.id);
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = g[i * d + j] * G[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * d + j];
          }
          mean_d /= static_cast<double>(d);
          mean_dx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            dx[i * d + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
        }
      });
}

Var RowSoftmax(Var x) {
  const Tensor& X = x.value();
  RequireRank(X, 2, "RowSoftmax");
  const std::size_t n = X.dim(0), m = X.dim(1);
  Tensor y({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = X.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] /= z;
  }
  return x.tape->Record(std::move(y), {x}, [x, n, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& p = t.value(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * p[i * m + j];
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += p[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

// ---- attention --------------------------------------------------------------

Var Attention(Var q, Var k, Var v, std::size_t heads, Tensor* probs) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  RequireRank(Q, 2, "Attention");
  RequireSameShape(Q, K, "Attention");
  RequireSameShape(Q, V, "Attention");
  const std::size_t n = Q.dim(0), d = Q.dim(1);
  Require(heads > 0 && d % heads == 0, "Attention: width " + std::to_string(d) + " not divisible by heads");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto N = static_cast<Eigen::Index>(n), DH = static_cast<Eigen::Index>(dh);
  const Strided stride(static_cast<Eigen::Index>(d));

  Tensor p({heads, n, n});
  Tensor y({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    CMapS Qh(Q.data() + h * dh, N, DH, stride);
    CMapS Kh(K.data() + h * dh, N, DH, stride);
    CMapS Vh(V.data() + h * dh, N, DH, stride);
    MapR P(p.data() + h * n * n, N, N);
    P.noalias() = (Qh * Kh.transpose()) * scale;
    for (Eigen::Index i = 0; i < N; ++i) {
      const double mx = P.row(i).maxCoeff();
      P.row(i) = (P.row(i).array() - mx).exp();
      P.row(i) /= P.row(i).sum();
    }
    MapS Yh(y.data() + h * dh, N, DH, stride);
    Yh.noalias() = P * Vh;
  }
  if (probs) *probs = p;
  return q.tape->Record(std::move(y), {q, k, v}, [q, k, v, heads, n, d, dh, scale, p = std::move(p)](Tape& t, std::uint32_t self) {
    const auto N = static_cast<Eigen::Index>(n), DH = static_cast<Eigen::Index>(dh);
    const Strided stride(static_cast<Eigen::Index>(d));
    const Tensor& g = t.grad(self);
    Tensor* dq = q.requires_grad() ? &t.grad(q.id) : nullptr;
    Tensor* dk = k.requires_grad() ? &t.grad(k.id) : nullptr;
    Tensor* dv = v.requires_grad() ? &t.grad(v.id) : nullptr;
    MatR dP(N, N);
    for (std::size_t h = 0; h < heads; ++h) {
      CMapS Qh(q.value().data() + h * dh, N, DH, stride);
      CMapS Kh(k.value().data() + h * dh, N, DH, stride);
      CMapS Vh(v.value().data() + h * dh, N, DH, stride);
      CMapS Gh(g.data() + h * dh, N, DH, stride);
      CMapR P(p.data() + h * n * n, N, N);
      if (dv) MapS(dv->data() + h * dh, N, DH, stride).noalias() += P.transpose() * Gh;
      if (!dq && !dk) continue;
      dP.noalias() = Gh * Vh.transpose();
      for (Eigen::Index i = 0; i < N; ++i) {
        const double dot = dP.row(i).dot(P.row(i));
        dP.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
      }
      if (dq) MapS(dq->data() + h * dh, N, DH, stride).noalias() += (dP * Kh) * scale;
      if (dk) MapS(dk->data() + h * dh, N, DH, stride).noalias() += (dP.transpose() * Qh) * scale;
    }
  });
}

// ---- convolutions -----------------------------------------------------------

Var Conv1d(Var x, Var w, Var b, std::size_t stride) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  RequireRank(X, 2, "Conv1d");
  RequireRank(W, 3, "Conv1d");
  const std::size_t cin = X.dim(0), len = X.dim(1), cout = W.dim(0), ks = W.dim(2);
  Require(W.dim(1) == cin, "Conv1d: channel mismatch");
  Require(b.value().size() == cout, "Conv1d: bias size mismatch");
  Require(stride >= 1, "Conv1d: stride must be positive");
  if (len < ks) Fail(ErrorCategory::kInvalidArgument, "input shorter than receptive field");
  const std::size_t out_len = (len - ks) / stride + 1;
  const std::size_t rows = cin * ks;
  MatR cols(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_len));
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t kk = 0; kk < ks; ++kk)
      for (std::size_t o = 0; o < out_len; ++o)
        cols(static_cast<Eigen::Index>(ci * ks + kk), static_cast<Eigen::Index>(o)) = X[ci * len + o * stride + kk];
  Tensor y({cout, out_len});
  AsMat(y, cout, out_len).noalias() = AsMat(W, cout, rows) * cols;
  const Tensor& B = b.value();
  for (std::size_t c = 0; c < cout; ++c)
    for (std::size_t o = 0; o < out_len; ++o) y[c * out_len + o] += B[c];
  return x.tape->Record(
      std::move(y), {x, w, b},
      [x, w, b, cin, len, cout, ks, stride, out_len, rows, cols = std::move(cols)](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        auto G = AsMat(g, cout, out_len);
        if (w.requires_grad()) AsMat(t.grad(w.id), cout, rows).noalias() += G * cols.transpose();
        if (b.requires_grad()) {
          Tensor& db = t.grad(b.id);
          for (std::size_t c = 0; c < cout; ++c) db[c] += G.row(static_cast<Eigen::Index>(c)).sum();
        }
        if (x.requires_grad()) {
          MatR dcols = AsMat(w.value(), cout, rows).transpose() * G;
          Tensor& dx = t.grad(x.id);
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t kk = 0; kk < ks; ++kk)
              for (std::size_t o = 0; o < out_len; ++o)
                dx[ci * len + o * stride + kk] +=
                    dcols(static_cast<Eigen::Index>(ci * ks + kk), static_cast<Eigen::Index>(o));
        }
      });
}

Var Conv2dSame(Var x, Var w) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  RequireRank(X, 3, "Conv2dSame");
  RequireRank(W, 4, "Conv2dSame");
  if (W.dim(2) != 3 || W.dim(3) != 3) Fail(ErrorCategory::kInvalidArgument, "unsupported kernel");
  const std::size_t cin = X.dim(0), h = X.dim(1), wd = X.dim(2), cout = W.dim(0);
  if (W.dim(1) != cin)
    Fail(ErrorCategory::kInvalidArgument, "Conv2dSame: kernel " + ShapeString(W.shape()) + " expects " +
                                              std::to_string(W.dim(1)) + " input channels, got " +
                                              std::to_string(cin));
  MatR cols = Im2Col3x3(X);
  Tensor y({cout, h, wd});
  AsMat(y, cout, h * wd).noalias() = AsMat(W, cout, cin * 9) * cols;
  return x.tape->Record(std::move(y), {x, w},
                        [x, w, cin, h, wd, cout, cols = std::move(cols)](Tape& t, std::uint32_t self) {
                          auto G = AsMat(t.grad(self), cout, h * wd);
                          if (w.requires_grad())
                            AsMat(t.grad(w.id), cout, cin * 9).noalias() += G * cols.transpose();
                          if (x.requires_grad()) {
                            MatR dcols = AsMat(w.value(), cout, cin * 9).transpose() * G;
                            Col2Im3x3(dcols, t.grad(x.id));
                          }
                        });
}

Var BatchNorm2d(Var x, Var gamma, Var beta, bool training, const Tensor& running_mean,
                const Tensor& running_var, BatchNormStats* stats, double eps) {
  const Tensor& X = x.value();
  RequireRank(X, 3, "BatchNorm2d");
  const std::size_t c = X.dim(0), m = X.dim(1) * X.dim(2);
  Require(gamma.value().size() == c && beta.value().size() == c, "BatchNorm2d: affine size mismatch");
  Require(running_mean.size() == c && running_var.size() == c, "BatchNorm2d: running stats size mismatch");
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  Tensor y(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> inv_std(c);
  if (stats) {
    stats->mean = Tensor({c});
    stats->var_unbiased = Tensor({c});
  }
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* row = X.data() + ci * m;
    double mean, var;
    if (training) {
      mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += row[i];
      mean /= static_cast<double>(m);
      var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (row[i] - mean) * (row[i] - mean);
      if (stats) {
        stats->mean[ci] = mean;
        stats->var_unbiased[ci] = m > 1 ? var / static_cast<double>(m - 1) : var;
      }
      var /= static_cast<double>(m);
    } else {
      mean = running_mean[ci];
      var = running_var[ci];
    }
    inv_std[ci] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < m; ++i) {
      xhat[ci * m + i] = (row[i] - mean) * inv_std[ci];
      y[ci * m + i] = G[ci] * xhat[ci * m + i] + B[ci];
    }
  }
  return x.tape->Record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, c, m, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                          std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& G = gamma.value();
        for (std::size_t ci = 0; ci < c; ++ci) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            sum_g += g[ci * m + i];
            sum_gx += g[ci * m + i] * xhat[ci * m + i];
          }
          if (gamma.requires_grad()) t.grad(gamma.id)[ci] += sum_gx;
          if (beta.requires_grad()) t.grad(beta.id)[ci] += sum_g;
          if (!x.requires_grad()) continue;
          Tensor& dx = t.grad(x.id);
          const double k = G[ci] * inv_std[ci];
          if (training) {
            const double mean_g = sum_g / static_cast<double>(m);
            const double mean_gx = sum_gx / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
              dx[ci * m + i] += k * (g[ci * m + i] - mean_g - xhat[ci * m + i] * mean_gx);
          } else {
            for (std::size_t i = 0; i < m; ++i) dx[ci * m + i] += k * g[ci * m + i];
          }
        }
      });
}

Var ChannelsToRows(Var x) {
  const Tensor& X = x.value();
  RequireRank(X, 3, "ChannelsToRows");
  const std::size_t c = X.dim(0), h = X.dim(1), w = X.dim(2);
  Tensor y({h, c * w});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) y[i * c * w + ci * w + j] = X[(ci * h + i) * w + j];
  return x.tape->Record(std::move(y), {x}, [x, c, h, w](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(x.id);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) dx[(ci * h + i) * w + j] += g[i * c * w + ci * w + j];
  });
}

// ---- sequence helpers -------------------------------------------------------

Var MaskRows(Var z, Var emb, std::span<const std::size_t> rows) {
  const Tensor& Z = z.value();
  RequireRank(Z, 2, "MaskRows");
  const std::size_t n = Z.dim(0), d = Z.dim(1);
  Require(emb.value().size() == d, "MaskRows: embedding width mismatch");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor y = Z;
  for (std::size_t r : idx) {
    Require(r < n, "MaskRows: row index out of range");
    std::copy(emb.value().data(), emb.value().data() + d, y.data() + r * d);
  }
  return z.tape->Record(std::move(y), {z, emb}, [z, emb, n, d, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::vector<char> masked(n, 0);
    for (std::size_t r : idx) masked[r] = 1;
    if (z.requires_grad()) {
      Tensor& dz = t.grad(z.id);
      for (std::size_t i = 0; i < n; ++i)
        if (!masked[i])
          for (std::size_t j = 0; j < d; ++j) dz[i * d + j] += g[i * d + j];
    }
    if (emb.requires_grad()) {
      Tensor& de = t.grad(emb.id);
      for (std::size_t i = 0; i < n; ++i)
        if (masked[i])
          for (std::size_t j = 0; j < d; ++j) de[j] += g[i * d + j];
    }
  });
}

Var AspPool(Var x, Var w, double var_floor) {
  const Tensor& X = x.value();
  RequireRank(X, 2, "AspPool");
  const std::size_t n = X.dim(0), d = X.dim(1);
  if (n == 0) Fail(ErrorCategory::kInvalidArgument, "empty sequence");
  Require(w.value().size() == d, "AspPool: attention vector width mismatch");
  const Tensor& Wv = w.value();

  std::vector<double> alpha(n);
  double mx = -INFINITY;
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += X[t * d + j] * Wv[j];
    alpha[t] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (double& a : alpha) z += (a = std::exp(a - mx));
  for (double& a : alpha) a /= z;

  Tensor y({2 * d});
  std::vector<double> var(d, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) y[j] += alpha[t] * X[t * d + j];
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = X[t * d + j] - y[j];
      var[j] += alpha[t] * c * c;
    }
  for (std::size_t j = 0; j < d; ++j) y[d + j] = std::sqrt(std::max(var[j], var_floor));

  return x.tape->Record(
      std::move(y), {x, w},
      [x, w, n, d, var_floor, alpha = std::move(alpha), var = std::move(var)](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& Y = t.value(self);
        const Tensor& X = x.value();
        const Tensor& Wv = w.value();
        std::vector<double> gvar(d);
        for (std::size_t j = 0; j < d; ++j) gvar[j] = var[j] > var_floor ? g[d + j] / (2.0 * Y[d + j]) : 0.0;
        // d loss / d alpha_t, then through the softmax to the frame scores
        std::vector<double> galpha(n, 0.0);
        double mean_ga = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double c = X[t * d + j] - Y[j];
            acc += g[j] * X[t * d + j] + gvar[j] * c * c;
          }
          galpha[t] = acc;
          mean_ga += alpha[t] * acc;
        }
        std::vector<double> gscore(n);
        for (std::size_t t = 0; t < n; ++t) gscore[t] = alpha[t] * (galpha[t] - mean_ga);
        if (x.requires_grad()) {
          Tensor& dx = t.grad(x.id);
          for (std::size_t t2 = 0; t2 < n; ++t2)
            for (std::size_t j = 0; j < d; ++j) {
              const double c = X[t2 * d + j] - Y[j];
              dx[t2 * d + j] += alpha[t2] * g[j] + 2.0 * alpha[t2] * c * gvar[j] + gscore[t2] * Wv[j];
            }
        }
        if (w.requires_grad()) {
          Tensor& dw = t.grad(w.id);
          for (std::size_t t2 = 0; t2 < n; ++t2)
            for (std::size_t j = 0; j < d; ++j) dw[j] += gscore[t2] * X[t2 * d + j];
        }
      });
}

Var WeightedFlatten(std::span<const Var> layers, Var vh) {
  Require(!layers.empty(), "WeightedFlatten: no layers");
  const std::size_t L = layers.size();
  Require(vh.value().size() == L, "WeightedFlatten: weight vector length must equal layer count");
  const Shape& s0 = layers[0].shape();
  Require(s0.size() == 2, "WeightedFlatten: layers must be matrices");
  const std::size_t n = s0[0], d = s0[1];
  for (const Var& l : layers) RequireSameShape(l.value(), layers[0].value(), "WeightedFlatten");
  const Tensor& V = vh.value();
  Tensor y({n, L * d});
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor& H = layers[l].value();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) y[t * L * d + l * d + j] = V[l] * H[t * d + j];
  }
  std::vector<Var> parents(layers.begin(), layers.end());
  parents.push_back(vh);
  std::vector<Var> ls(layers.begin(), layers.end());
  return vh.tape->Record(std::move(y), parents, [ls = std::move(ls), vh, n, d, L](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& V = vh.value();
    for (std::size_t l = 0; l < L; ++l) {
      const Tensor& H = ls[l].value();
      Tensor* dh = ls[l].requires_grad() ? &t.grad(ls[l].id) : nullptr;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double gg = g[i * L * d + l * d + j];
          if (dh) (*dh)[i * d + j] += V[l] * gg;
          acc += H[i * d + j] * gg;
        }
      if (vh.requires_grad()) t.grad(vh.id)[l] += acc;
    }
  });
}

Var Stack(std::span<const Var> parts) {
  Require(!parts.empty(), "Stack: nothing to stack");
  std::size_t total = 0;
  for (const Var& p : parts) total += p.value().size();
  Tensor y({total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), y.data() + off);
    off += p.value().size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->Record(std::move(y), parts, [ps](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t n = p.value().size();
      if (p.requires_grad()) {
        Tensor& dp = t.grad(p.id);
        for (std::size_t i = 0; i < n; ++i) dp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var Dot(Var a, const Tensor& weights) {
  Require(a.value().size() == weights.size(), "Dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
  return a.tape->Record(Tensor({1}, {s}), {a}, [a, weights](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    Tensor& da = t.grad(a.id);
    for (std::size_t i = 0; i < weights.size(); ++i) da[i] += g * weights[i];
  });
}

Var Sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->Record(Tensor({1}, {s}), {a}, [a](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(a.id).values()) v += g;
  });
}

}  // namespace ssladd::ag
