#pragma once

// Differentiable operations recorded on a Tape.
//
// Sequence tensors are stored flattened: a batch of B sequences of length T
// with width E is a (B*T) x E matrix whose row b*T + t holds position t of
// sequence b.

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "antic/autograd.hpp"

namespace antic::ops {

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

/// Row-wise softmax of x * inv_temperature, numerically stabilized.
inline Matrix softmax_rows(const Matrix& x, double inv_temperature = 1.0) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp((x(r, c) - mx) * inv_temperature);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

inline Matrix log_softmax_rows(const Matrix& x, double inv_temperature = 1.0) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff() * inv_temperature;
    double total = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) total += std::exp(x(r, c) * inv_temperature - mx);
    const double lse = mx + std::log(total);
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * inv_temperature - lse;
  }
  return out;
}

}  // namespace detail

inline Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out = av * bv;
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  detail::require_same_shape(t.value(a), t.value(b), "add");
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    tp.accumulate(a, tp.upstream(self));
    tp.accumulate(b, tp.upstream(self));
  });
}

/// a + row, with the 1 x C row broadcast over every row of a.
inline Var add_bias(Tape& t, Var a, Var row) {
  const Matrix& bv = t.value(row);
  if (bv.rows() != 1 || bv.cols() != t.value(a).cols()) throw ShapeError("add_bias: bias must be 1 x cols");
  Matrix out = t.value(a);
  out.rowwise() += bv.row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

/// x W + b.
inline Var linear(Tape& t, Var x, Var weight, Var bias) { return add_bias(t, matmul(t, x, weight), bias); }

inline Var scale(Tape& t, Var a, double c) {
  Matrix out = t.value(a) * c;
  return t.push(std::move(out), {a}, [a, c](Tape& tp, std::size_t self) { tp.accumulate(a, tp.upstream(self) * c); });
}

/// Tanh approximation of GELU.
inline Var gelu(Tape& t, Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c3 = 0.044715;
  const Matrix& x = t.value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c3 * v * v * v)));
  }
  return t.push(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(a);
    const Matrix& g = tp.upstream(self);
    Matrix dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double th = std::tanh(k * (v + c3 * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c3 * v * v);
      dx.data()[i] = g.data()[i] * d;
    }
    tp.accumulate(a, dx);
  });
}

/// Row-wise layer normalization with learned gain and bias (both 1 x C).
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  if (gv.cols() != c || bv.cols() != c) throw ShapeError("layer_norm: gain/bias width mismatch");
  auto xhat = std::make_shared<Matrix>(n, c);
  auto inv_std = std::make_shared<Vector>(n);
  Matrix out(n, c);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mean) * (*inv_std)(r);
    out.row(r) = xhat->row(r).cwiseProduct(gv.row(0)) + bv.row(0);
  }
  return t.push(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& gv = tp.value(gain);
    if (tp.needs_grad(gain)) tp.accumulate(gain, g.cwiseProduct(*xhat).colwise().sum());
    if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
    if (tp.needs_grad(x)) {
      const Eigen::Index c = g.cols();
      Matrix dx(g.rows(), c);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gv.row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
        dx.row(r) = (*inv_std)(r) * (dxhat.array() - m1 - xhat->row(r).array() * m2);
      }
      tp.accumulate(x, dx);
    }
  });
}

struct AttentionShape {
  int batch = 1;
  int query_len = 1;
  int key_len = 1;
  int heads = 1;
  /// Query i may only see keys j <= i (requires query_len == key_len).
  bool causal = false;
};

/// Multi-head scaled dot-product attention over already-projected q, k, v.
/// q is (batch*query_len) x E, k and v are (batch*key_len) x E, E divisible by heads.
/// When weights_out is given it receives one query_len x key_len matrix per
/// (batch, head), at index b*heads + h.
inline Var attention(Tape& t, Var q, Var k, Var v, AttentionShape s, std::vector<Matrix>* weights_out = nullptr) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const Eigen::Index width = qv.cols();
  if (s.heads <= 0 || width % s.heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (qv.rows() != Eigen::Index(s.batch) * s.query_len || kv.rows() != Eigen::Index(s.batch) * s.key_len ||
      vv.rows() != kv.rows() || kv.cols() != width || vv.cols() != width) {
    throw ShapeError("attention: q/k/v shapes inconsistent with batch and lengths");
  }
  if (s.key_len < 1) throw ShapeError("attention: empty key sequence");
  if (s.causal && s.query_len != s.key_len) throw ShapeError("attention: causal mask needs square attention");
  const Eigen::Index dh = width / s.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(std::size_t(s.batch) * s.heads);
  Matrix out(qv.rows(), width);
  for (int b = 0; b < s.batch; ++b) {
    for (int h = 0; h < s.heads; ++h) {
      auto qb = qv.block(Eigen::Index(b) * s.query_len, h * dh, s.query_len, dh);
      auto kb = kv.block(Eigen::Index(b) * s.key_len, h * dh, s.key_len, dh);
      auto vb = vv.block(Eigen::Index(b) * s.key_len, h * dh, s.key_len, dh);
      Matrix scores = (qb * kb.transpose()) * inv_sqrt;
      if (s.causal) {
        for (int i = 0; i < s.query_len; ++i)
          for (int j = i + 1; j < s.key_len; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
      }
      Matrix p = detail::softmax_rows(scores);
      out.block(Eigen::Index(b) * s.query_len, h * dh, s.query_len, dh) = p * vb;
      (*probs)[std::size_t(b) * s.heads + h] = std::move(p);
    }
  }
  if (weights_out != nullptr) *weights_out = *probs;
  return t.push(std::move(out), {q, k, v}, [q, k, v, s, dh, inv_sqrt, probs](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& qv = tp.value(q);
    const Matrix& kv = tp.value(k);
    const Matrix& vv = tp.value(v);
    Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
    Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
    Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
    for (int b = 0; b < s.batch; ++b) {
      for (int h = 0; h < s.heads; ++h) {
        const Matrix& p = (*probs)[std::size_t(b) * s.heads + h];
        const Eigen::Index qr = Eigen::Index(b) * s.query_len;
        const Eigen::Index kr = Eigen::Index(b) * s.key_len;
        auto gb = g.block(qr, h * dh, s.query_len, dh);
        auto qb = qv.block(qr, h * dh, s.query_len, dh);
        auto kb = kv.block(kr, h * dh, s.key_len, dh);
        auto vb = vv.block(kr, h * dh, s.key_len, dh);
        Matrix dp = gb * vb.transpose();
        dv.block(kr, h * dh, s.key_len, dh) += p.transpose() * gb;
        Matrix ds = p.cwiseProduct(dp);
        const Vector row_dot = ds.rowwise().sum();
        ds -= (p.array().colwise() * row_dot.array()).matrix();
        ds *= inv_sqrt;
        dq.block(qr, h * dh, s.query_len, dh) += ds * kb;
        dk.block(kr, h * dh, s.key_len, dh) += ds.transpose() * qb;
      }
    }
    tp.accumulate(q, dq);
    tp.accumulate(k, dk);
    tp.accumulate(v, dv);
  });
}

/// out.row(i) = x.row(index[i]); repeated indices accumulate in the backward pass.
inline Var gather_rows(Tape& t, Var x, std::vector<int> index) {
  const Matrix& xv = t.value(x);
  Matrix out(static_cast<Eigen::Index>(index.size()), xv.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(index[i]);
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(index));
  return t.push(std::move(out), {x}, [x, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix dx = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
    for (std::size_t i = 0; i < idx->size(); ++i) dx.row((*idx)[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(x, dx);
  });
}

inline Var concat_rows(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.cols()) throw ShapeError("concat_rows: widths differ");
  Matrix out(av.rows() + bv.rows(), av.cols());
  out << av, bv;
  const Eigen::Index ra = av.rows();
  const Eigen::Index rb = bv.rows();
  return t.push(std::move(out), {a, b}, [a, b, ra, rb](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g.topRows(ra));
    if (tp.needs_grad(b)) tp.accumulate(b, g.bottomRows(rb));
  });
}

inline Var concat_cols(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Eigen::Index ca = av.cols();
  const Eigen::Index cb = bv.cols();
  return t.push(std::move(out), {a, b}, [a, b, ca, cb](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate(a, g.leftCols(ca));
    if (tp.needs_grad(b)) tp.accumulate(b, g.rightCols(cb));
  });
}

/// Trailing-window mean over each sequence: out[b, t] = mean(x[b, max(0, t-window+1) .. t]).
inline Var causal_pool(Tape& t, Var x, int batch, int length, int window) {
  const Matrix& xv = t.value(x);
  if (xv.rows() != Eigen::Index(batch) * length) throw ShapeError("causal_pool: rows != batch * length");
  if (window < 1) throw ShapeError("causal_pool: window must be >= 1");
  Matrix out(xv.rows(), xv.cols());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = Eigen::Index(b) * length;
    for (int i = 0; i < length; ++i) {
      const int lo = std::max(0, i - window + 1);
      out.row(base + i) = xv.middleRows(base + lo, i - lo + 1).colwise().mean();
    }
  }
  return t.push(std::move(out), {x}, [x, batch, length, window](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix dx = Matrix::Zero(g.rows(), g.cols());
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index base = Eigen::Index(b) * length;
      for (int i = 0; i < length; ++i) {
        const int lo = std::max(0, i - window + 1);
        const double w = 1.0 / (i - lo + 1);
        for (int j = lo; j <= i; ++j) dx.row(base + j) += w * g.row(base + i);
      }
    }
    tp.accumulate(x, dx);
  });
}

inline Var softmax_rows(Tape& t, Var x) {
  Matrix out = detail::softmax_rows(t.value(x));
  return t.push(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(Var{self});
    const Matrix& g = tp.upstream(self);
    const Vector dot = g.cwiseProduct(y).rowwise().sum();
    tp.accumulate(x, y.cwiseProduct((g.colwise() - dot).eval()));
  });
}

/// Inverted dropout; identity when p == 0 or rng is null (evaluation mode).
inline Var dropout(Tape& t, Var x, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  const Matrix& xv = t.value(x);
  auto mask = std::make_shared<Matrix>(xv.rows(), xv.cols());
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(*rng) ? s : 0.0;
  Matrix out = xv.cwiseProduct(*mask);
  return t.push(std::move(out), {x}, [x, mask](Tape& tp, std::size_t self) {
    tp.accumulate(x, tp.upstream(self).cwiseProduct(*mask));
  });
}

/// Mean over rows of the label-smoothed cross-entropy. Row r's target
/// distribution puts 1 - eps + eps/K on targets[r] and eps/K elsewhere.
inline Var smoothed_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets, double eps) {
  const Matrix& z = t.value(logits);
  const Eigen::Index n = z.rows();
  const Eigen::Index k = z.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n) throw ShapeError("smoothed_cross_entropy: target count != rows");
  if (n == 0) throw ShapeError("smoothed_cross_entropy: no rows");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("smoothed_cross_entropy: smoothing must lie in [0, 1)");
  auto q = std::make_shared<Matrix>(Matrix::Constant(n, k, eps / static_cast<double>(k)));
  for (Eigen::Index r = 0; r < n; ++r) {
    const int c = targets[static_cast<std::size_t>(r)];
    if (c < 0 || c >= k) throw ValidationError("smoothed_cross_entropy: target class out of range");
    (*q)(r, c) += 1.0 - eps;
  }
  const Matrix logp = detail::log_softmax_rows(z);
  Matrix out(1, 1);
  out(0, 0) = -(q->cwiseProduct(logp)).sum() / static_cast<double>(n);
  return t.push(std::move(out), {logits}, [logits, q, n](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)(0, 0);
    Matrix d = detail::softmax_rows(tp.value(logits)) - *q;
    tp.accumulate(logits, d * (g / static_cast<double>(n)));
  });
}

/// Mean over rows of T^2 * KL(teacher || softmax(logits / T)).
inline Var distillation_kl(Tape& t, Var logits, const Matrix& teacher_probs, double temperature) {
  const Matrix& z = t.value(logits);
  detail::require_same_shape(z, teacher_probs, "distillation_kl");
  if (!(temperature > 0.0)) throw ConfigError("distillation_kl: temperature must be positive");
  const Eigen::Index n = z.rows();
  if (n == 0) throw ShapeError("distillation_kl: no rows");
  const Matrix logq = detail::log_softmax_rows(z, 1.0 / temperature);
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double p = teacher_probs.data()[i];
    if (p > 0.0) total += p * (std::log(p) - logq.data()[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = temperature * temperature * total / static_cast<double>(n);
  auto p = std::make_shared<Matrix>(teacher_probs);
  return t.push(std::move(out), {logits}, [logits, p, temperature, n](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)(0, 0);
    Matrix d = detail::softmax_rows(tp.value(logits), 1.0 / temperature) - *p;
    tp.accumulate(logits, d * (g * temperature / static_cast<double>(n)));
  });
}

}  // namespace antic::ops
