#pragma once

#include <cstdint>
#include <vector>

#include "separator/tensor.hpp"

// Dense op set for the autodiff engine. Shape contracts are documented per
// op; every differentiable op is covered by finite-difference tests.
namespace separator::ad {

// A [..., m, k] x W [k, n] -> [..., m, n]. Leading axes of A are flattened.
Tensor matmul(const Tensor& a, const Tensor& w);

// Batched matmul. a [G, m, k]; b [G, k, n] (or [G, n, k] when transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise sum; b may have a shape that is a trailing suffix of a's
// (broadcast over the leading axes), e.g. bias [n] against [B, T, n].
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product, identical shapes.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor log_(const Tensor& a);   // errors on non-positive input
Tensor exp_(const Tensor& a);

// Softmax over the last axis. The masked variant takes a 0/1 byte mask of
// the same flattened size; masked positions get probability 0. A fully
// masked row is an error.
Tensor softmax_last(const Tensor& a);
Tensor softmax_last_masked(const Tensor& a, std::vector<uint8_t> mask);

// Layer normalization over the last axis with learned gain/bias [n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// table [V, d], ids of length prod(out_leading) -> out_leading + [d].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        const Shape& out_leading);

Tensor concat(const std::vector<Tensor>& parts, size_t axis);
Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len);
Tensor reshape(const Tensor& a, Shape new_shape);

// [B, T, H*dh] -> [B*H, T, dh] permutation and its inverse.
Tensor split_heads(const Tensor& a, size_t heads);
Tensor merge_heads(const Tensor& a, size_t heads);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Euclidean norm over the last axis: [..., n] -> [...]. Subgradient 0 at 0.
Tensor norm_last(const Tensor& a);

// Token-level cross entropy from raw logits [N, V] against integer targets;
// per-row weights (e.g. 0 for padding). Returns weighted mean, a scalar.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<double>& weights);

// Cross entropy against a full target distribution [N, K] (constant).
Tensor cross_entropy_logits_dist(const Tensor& logits,
                                 const std::vector<double>& target_dist);

// Forward value == quantized; gradient passes unchanged to `continuous`
// and zero to `quantized`.
Tensor straight_through(const Tensor& continuous, const Tensor& quantized);

// Identity forward, zero gradient contribution on backward.
Tensor stopgradient(const Tensor& a);

}  // namespace separator::ad
