#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mile/tensor.hpp"

// Differentiable tensor operations. Each op checks shapes, computes its
// forward value eagerly, and records a backward step on the active Graph when
// any input requires a gradient. Outputs are checked for NaN/Inf.
namespace mile::ops {

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x . w^T for x [m x k] and w [n x k]; the layout of every weight matrix.
Tensor linear(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds a length-n row vector to every row of a [.. x n] tensor.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor exp(const Tensor& a);
/// Natural log; non-positive input is a numeric error.
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// z - max(z) - log(sum(exp(z - max(z)))) along `axis`.
Tensor log_softmax(const Tensor& z, std::size_t axis);

/// Rows of `weight` [vocab x dim] selected by `ids` -> [ids.size() x dim].
Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids);

/// x * gain / sqrt(mean(x^2) + eps) over the last axis of x [rows x dim].
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

Tensor silu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

/// Multi-head scaled dot-product attention with a causal mask.
/// q, k, v are [batch*seq x dim] with heads laid out contiguously along dim.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t batch, std::size_t seq, std::size_t n_heads);

/// Rotary position embedding on [batch*seq x dim], rotating interleaved
/// pairs (2i, 2i+1) of each head by angle pos * base^(-2i/head_dim).
Tensor rotary(const Tensor& x, std::size_t batch, std::size_t seq,
              std::size_t n_heads, double base = 10000.0);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace mile::ops
