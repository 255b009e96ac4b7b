#pragma once

// Differentiable operators. Every operator computes its forward value
// immediately and records a node (with a backward closure when any operand
// requires a gradient) on the operands' tape. Shape errors name the
// operator and the offending shapes.

#include <cstdint>
#include <span>
#include <vector>

#include "xbm/ad/tape.hpp"

namespace xbm::ad {

/// Elementwise; `b` must have the shape of `a` or a suffix of it (broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// 1 - a
Var complement(Var a);
Var exp(Var a);
Var log(Var a);

/// a: [..., k], b: [k, n] -> [..., n]
Var matmul(Var a, Var b);
/// x W + bias with x: [..., in], W: [in, out], bias: [out] (may be unbound).
Var linear(Var x, Var weight, Var bias);
/// 2-D transpose.
Var transpose(Var a);

/// Rows of `table` ([V, d]) selected by `ids`; result shape is prefix + [d].
Var embedding(Var table, std::span<const int> ids, Shape prefix);

/// Along the last axis; both subtract the row max before exponentiating.
Var softmax(Var x);
Var log_softmax(Var x);

/// Normalises the last axis, then applies gamma/beta of shape [d].
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// tanh approximation of GELU.
Var gelu(Var x);

Var concat(std::span<const Var> parts, int axis);
Var slice(Var x, int axis, std::int64_t start, std::int64_t length);
Var reshape(Var x, Shape shape);
/// Selects entries of axis 0 (repeats allowed).
Var take(Var x, std::span<const std::int64_t> rows);
/// out[i] = x.flat[index[i]], reshaped to `out_shape`.
Var gather(Var x, std::vector<std::int64_t> index, Shape out_shape);

Var sum(Var x);
Var mean(Var x);
/// Mean over one axis, which is removed from the shape.
Var mean_axis(Var x, int axis);

/// Weighted mean over rows of -log softmax(logits)[target]. logits: [N, K].
/// Rows with weight 0 are ignored; empty weights means all ones.
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights = {});

/// y[..., l] = prod_{j < l} x[..., j] along the last axis (y[..., 0] = 1).
Var cumprod_exclusive(Var x);
/// Scales each row of the last axis to unit Euclidean norm.
Var l2_normalize(Var x, double eps = 1e-12);

struct AttentionOptions {
  int heads = 1;
  /// Query i (absolute position query_offset + i) sees keys j <= query_offset + i.
  bool causal = false;
  std::int64_t query_offset = 0;
  /// Optional [B, Tk] nonnegative key weights. A key with weight a enters the
  /// normaliser as a * exp(score); weight 0 removes the key exactly.
  Var key_weights;
};

struct AttentionResult {
  Var out;
  /// Normalised attention weights [B, heads, Tq, Tk].
  Tensor weights;
};

/// Multi-head scaled dot-product attention over already-projected inputs.
/// q: [B, Tq, D], k and v: [B, Tk, D]; D divisible by heads.
AttentionResult attention(Var q, Var k, Var v, const AttentionOptions& options);

}  // namespace xbm::ad
