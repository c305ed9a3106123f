#include "mile/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mile/error.hpp"

namespace mile::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(std::span<double> v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Graph::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

Tensor finish(Shape shape, std::vector<double> data, bool grad, const char* op) {
  check_finite(data, op);
  return Tensor(std::move(shape), std::move(data), grad);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// Applies `fn(in_value, out_value, out_grad) -> d out / d in * out_grad`.
template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, const char* op, Forward forward, Derivative derivative) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(x[i]);
  const bool grad = recording({&a});
  Tensor result = finish(a.shape(), std::move(out), grad, op);
  if (grad) {
    Graph::active()->record(result, [a, result, derivative](std::span<const double> g) mutable {
      auto ga = a.grad_mut();
      auto x = a.data();
      auto y = result.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += derivative(x[i], y[i]) * g[i];
    });
  }
  return result;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " . " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  const bool grad = recording({&a, &b});
  Tensor result = finish({m, n}, std::move(out), grad, "matmul");
  if (grad) {
    Graph::active()->record(result, [a, b, m, k, n](std::span<const double> g) mutable {
      auto gm = as_matrix(g, m, n);
      if (a.requires_grad()) {
        as_matrix(a.grad_mut(), m, k).noalias() += gm * as_matrix(std::as_const(b).data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        as_matrix(b.grad_mut(), k, n).noalias() += as_matrix(std::as_const(a).data(), m, k).transpose() * gm;
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  if (w.dim(1) != k) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() =
      as_matrix(x.data(), m, k) * as_matrix(w.data(), n, k).transpose();
  const bool grad = recording({&x, &w});
  Tensor result = finish({m, n}, std::move(out), grad, "linear");
  if (grad) {
    Graph::active()->record(result, [x, w, m, k, n](std::span<const double> g) mutable {
      auto gm = as_matrix(g, m, n);
      if (x.requires_grad()) {
        as_matrix(x.grad_mut(), m, k).noalias() += gm * as_matrix(std::as_const(w).data(), n, k);
      }
      if (w.requires_grad()) {
        as_matrix(w.grad_mut(), n, k).noalias() += gm.transpose() * as_matrix(std::as_const(x).data(), m, k);
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  const bool grad = recording({&a, &b});
  Tensor result = finish(a.shape(), std::move(out), grad, "add");
  if (grad) {
    Graph::active()->record(result, [a, b](std::span<const double> g) mutable {
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->grad_mut();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const bool grad = recording({&a, &b});
  Tensor result = finish(a.shape(), std::move(out), grad, "sub");
  if (grad) {
    Graph::active()->record(result, [a, b](std::span<const double> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const bool grad = recording({&a, &b});
  Tensor result = finish(a.shape(), std::move(out), grad, "mul");
  if (grad) {
    Graph::active()->record(result, [a, b](std::span<const double> g) mutable {
      auto x = std::as_const(a).data(), y = std::as_const(b).data();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank(row, 1, "add_row");
  const std::size_t n = row.dim(0);
  if (a.shape().back() != n) {
    throw DimensionError("add_row: " + shape_string(a.shape()) + " vs row " + shape_string(row.shape()));
  }
  std::vector<double> out(a.numel());
  auto x = a.data(), r = row.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + r[i % n];
  const bool grad = recording({&a, &row});
  Tensor result = finish(a.shape(), std::move(out), grad, "add_row");
  if (grad) {
    Graph::active()->record(result, [a, row, n](std::span<const double> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (row.requires_grad()) {
        auto gr = row.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gr[i % n] += g[i];
      }
    });
  }
  return result;
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const bool grad = recording({&a});
  Tensor result = finish({1}, {total}, grad, "sum");
  if (grad) {
    Graph::active()->record(result, [a](std::span<const double> g) mutable {
      for (double& v : a.grad_mut()) v += g[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor log_softmax(const Tensor& z, std::size_t axis) {
  if (axis >= z.rank()) throw DimensionError("log_softmax: axis out of range");
  const Shape& s = z.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  check_finite(z.data(), "log_softmax input");

  std::vector<double> out(z.numel());
  auto x = z.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += std::exp(x[base + j * inner] - mx);
      const double lse = std::log(acc);
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] = x[base + j * inner] - mx - lse;
    }
  }
  const bool grad = recording({&z});
  Tensor result = finish(s, std::move(out), grad, "log_softmax");
  if (grad) {
    Graph::active()->record(result, [z, result, outer, inner, n](std::span<const double> g) mutable {
      auto gz = z.grad_mut();
      auto y = std::as_const(result).data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double gsum = 0.0;
          for (std::size_t j = 0; j < n; ++j) gsum += g[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            gz[idx] += g[idx] - std::exp(y[idx]) * gsum;
          }
        }
      }
    });
  }
  return result;
}

Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids) {
  require_rank(weight, 2, "embedding");
  const std::size_t vocab = weight.dim(0), dim = weight.dim(1);
  if (ids.empty()) throw DimensionError("embedding: no ids");
  std::vector<double> out(ids.size() * dim);
  auto w = weight.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[r]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(ids[r] * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  const bool grad = recording({&weight});
  Tensor result = finish({ids.size(), dim}, std::move(out), grad, "embedding");
  if (grad) {
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    Graph::active()->record(result, [weight, saved = std::move(saved), dim](std::span<const double> g) mutable {
      auto gw = weight.grad_mut();
      for (std::size_t r = 0; r < saved.size(); ++r) {
        const std::size_t off = static_cast<std::size_t>(saved[r]) * dim;
        for (std::size_t c = 0; c < dim; ++c) gw[off + c] += g[r * dim + c];
      }
    });
  }
  return result;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_rank(x, 2, "rms_norm");
  require_rank(gain, 1, "rms_norm");
  const std::size_t rows = x.dim(0), dim = x.dim(1);
  if (gain.dim(0) != dim) throw DimensionError("rms_norm: gain length differs from row width");
  std::vector<double> out(x.numel());
  std::vector<double> inv_rms(rows);
  auto xv = x.data(), gv = gain.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < dim; ++c) ss += xv[r * dim + c] * xv[r * dim + c];
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(dim) + eps);
    for (std::size_t c = 0; c < dim; ++c) out[r * dim + c] = xv[r * dim + c] * inv_rms[r] * gv[c];
  }
  const bool grad = recording({&x, &gain});
  Tensor result = finish(x.shape(), std::move(out), grad, "rms_norm");
  if (grad) {
    Graph::active()->record(result, [x, gain, inv_rms = std::move(inv_rms), rows, dim](std::span<const double> g) mutable {
      auto xv = std::as_const(x).data(), gv = std::as_const(gain).data();
      std::span<double> gx, gg;
      if (x.requires_grad()) gx = x.grad_mut();
      if (gain.requires_grad()) gg = gain.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        const double ir = inv_rms[r];
        double dot = 0.0;  // sum_c dxhat_c * xhat_c
        for (std::size_t c = 0; c < dim; ++c) {
          const std::size_t i = r * dim + c;
          const double xhat = xv[i] * ir;
          if (!gg.empty()) gg[c] += g[i] * xhat;
          dot += g[i] * gv[c] * xhat;
        }
        if (gx.empty()) continue;
        const double m = dot / static_cast<double>(dim);
        for (std::size_t c = 0; c < dim; ++c) {
          const std::size_t i = r * dim + c;
          gx[i] += ir * (g[i] * gv[c] - xv[i] * ir * m);
        }
      }
    });
  }
  return result;
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t batch, std::size_t seq, std::size_t n_heads) {
  require_rank(q, 2, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const std::size_t dim = q.dim(1);
  if (q.dim(0) != batch * seq) throw DimensionError("causal_attention: rows != batch*seq");
  if (n_heads == 0 || dim % n_heads != 0) throw DimensionError("causal_attention: dim not divisible by heads");
  const std::size_t hd = dim / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto T = static_cast<Eigen::Index>(seq), H = static_cast<Eigen::Index>(hd);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));

  std::vector<double> out(q.numel());
  // Attention probabilities, saved for backward: [batch][head][seq x seq].
  std::vector<double> probs(batch * n_heads * seq * seq, 0.0);
  RowMat scores(T, T);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = b * seq * dim + h * hd;
      ConstStridedMap qm(q.data().data() + off, T, H, stride);
      ConstStridedMap km(k.data().data() + off, T, H, stride);
      ConstStridedMap vm(v.data().data() + off, T, H, stride);
      scores.noalias() = qm * km.transpose();
      MatMap p(probs.data() + (b * n_heads + h) * seq * seq, T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = scores(i, 0) * sc;
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j) * sc);
        double acc = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(scores(i, j) * sc - mx);
          acc += p(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) /= acc;
      }
      StridedMap om(out.data() + off, T, H, stride);
      om.noalias() = p.triangularView<Eigen::Lower>() * vm;
    }
  }
  const bool grad = recording({&q, &k, &v});
  Tensor result = finish(q.shape(), std::move(out), grad, "causal_attention");
  if (grad) {
    Graph::active()->record(result, [q, k, v, probs = std::move(probs), batch, seq, n_heads, dim, hd, sc](
                                        std::span<const double> g) mutable {
      const auto T = static_cast<Eigen::Index>(seq), H = static_cast<Eigen::Index>(hd);
      const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));
      std::span<double> gq, gk, gv;
      if (q.requires_grad()) gq = q.grad_mut();
      if (k.requires_grad()) gk = k.grad_mut();
      if (v.requires_grad()) gv = v.grad_mut();
      RowMat dp(T, T);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = b * seq * dim + h * hd;
          ConstStridedMap qm(std::as_const(q).data().data() + off, T, H, stride);
          ConstStridedMap km(std::as_const(k).data().data() + off, T, H, stride);
          ConstStridedMap vm(std::as_const(v).data().data() + off, T, H, stride);
          ConstStridedMap dout(g.data() + off, T, H, stride);
          MatMap p(probs.data() + (b * n_heads + h) * seq * seq, T, T);
          if (!gv.empty()) {
            StridedMap dv(gv.data() + off, T, H, stride);
            dv.noalias() += p.transpose() * dout;
          }
          if (gq.empty() && gk.empty()) continue;
          dp.noalias() = dout * vm.transpose();
          // Reuse dp as dS = P * (dP - rowsum(P * dP)), scaled.
          for (Eigen::Index i = 0; i < T; ++i) {
            double dot = 0.0;
            for (Eigen::Index j = 0; j <= i; ++j) dot += p(i, j) * dp(i, j);
            for (Eigen::Index j = 0; j <= i; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * sc;
            for (Eigen::Index j = i + 1; j < T; ++j) dp(i, j) = 0.0;
          }
          if (!gq.empty()) {
            StridedMap dq(gq.data() + off, T, H, stride);
            dq.noalias() += dp * km;
          }
          if (!gk.empty()) {
            StridedMap dk(gk.data() + off, T, H, stride);
            dk.noalias() += dp.transpose() * qm;
          }
        }
      }
    });
  }
  return result;
}

namespace {

// cos/sin tables indexed [pos][pair].
struct RotaryTable {
  std::vector<double> cos, sin;
};

RotaryTable rotary_table(std::size_t seq, std::size_t hd, double base) {
  const std::size_t pairs = hd / 2;
  RotaryTable t{std::vector<double>(seq * pairs), std::vector<double>(seq * pairs)};
  for (std::size_t pos = 0; pos < seq; ++pos) {
    for (std::size_t i = 0; i < pairs; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double angle = static_cast<double>(pos) * freq;
      t.cos[pos * pairs + i] = std::cos(angle);
      t.sin[pos * pairs + i] = std::sin(angle);
    }
  }
  return t;
}

// Rotates pairs by +angle (forward) or -angle (transpose, for backward).
void apply_rotary(std::span<const double> in, std::span<double> out, const RotaryTable& t,
                  std::size_t rows, std::size_t seq, std::size_t n_heads, std::size_t hd,
                  bool transpose, bool accumulate) {
  const std::size_t pairs = hd / 2, dim = n_heads * hd;
  const double sign = transpose ? -1.0 : 1.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r % seq;
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < pairs; ++i) {
        const std::size_t idx = r * dim + h * hd + 2 * i;
        const double c = t.cos[pos * pairs + i], s = sign * t.sin[pos * pairs + i];
        const double x0 = in[idx], x1 = in[idx + 1];
        const double y0 = x0 * c - x1 * s, y1 = x0 * s + x1 * c;
        if (accumulate) {
          out[idx] += y0;
          out[idx + 1] += y1;
        } else {
          out[idx] = y0;
          out[idx + 1] = y1;
        }
      }
    }
  }
}

}  // namespace

Tensor rotary(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t n_heads, double base) {
  require_rank(x, 2, "rotary");
  const std::size_t dim = x.dim(1);
  if (x.dim(0) != batch * seq) throw DimensionError("rotary: rows != batch*seq");
  if (n_heads == 0 || dim % n_heads != 0 || (dim / n_heads) % 2 != 0) {
    throw DimensionError("rotary: head dimension must be even");
  }
  const std::size_t hd = dim / n_heads;
  auto table = std::make_shared<RotaryTable>(rotary_table(seq, hd, base));
  std::vector<double> out(x.numel());
  apply_rotary(x.data(), out, *table, x.dim(0), seq, n_heads, hd, false, false);
  const bool grad = recording({&x});
  Tensor result = finish(x.shape(), std::move(out), grad, "rotary");
  if (grad) {
    Graph::active()->record(result, [x, table, seq, n_heads, hd](std::span<const double> g) mutable {
      apply_rotary(g, x.grad_mut(), *table, x.dim(0), seq, n_heads, hd, true, true);
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) throw DimensionError("concat: shape mismatch off-axis");
    }
    shape[axis] += p.dim(axis);
  }
  const std::size_t row = shape[axis] * inner;
  std::vector<double> out(shape_numel(shape));
  std::size_t col = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    const std::size_t width = p.dim(axis) * inner;
    auto src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * width), width,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    }
    col += width;
    grad = grad || p.requires_grad();
  }
  grad = grad && Graph::active() != nullptr;
  Tensor result = finish(shape, std::move(out), grad, "concat");
  if (grad) {
    Graph::active()->record(result, [parts, outer, inner, axis, row](std::span<const double> g) mutable {
      std::size_t col = 0;
      for (const Tensor& p : parts) {
        const std::size_t width = p.dim(axis) * inner;
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t c = 0; c < width; ++c) gp[o * width + c] += g[o * row + col + c];
          }
        }
        col += width;
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const bool grad = recording({&a});
  Tensor result = finish(std::move(shape), std::move(out), grad, "reshape");
  if (grad) {
    Graph::active()->record(result, [a](std::span<const double> g) mutable {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return result;
}

}  // namespace mile::ops
