#pragma once

#include <vector>

#include "hyperst/tape.hpp"

/// Differentiable primitives. Every op either returns its documented shape or
/// throws DimensionError; nothing broadcasts implicitly.
namespace hyperst::ops {

/// [m×k]·[k×n] -> [m×n].
Var matmul(Var a, Var b);

/// Elementwise; operands must have identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var sigmoid(Var x);
Var tanh(Var x);
Var scale(Var x, double factor);

/// Multiplies x by vector v broadcast along `axis`: v has x.shape[axis] entries.
Var scale_along(Var x, Var v, std::size_t axis);
/// Adds vector v broadcast along `axis`.
Var add_along(Var x, Var v, std::size_t axis);

/// Sum of all entries -> shape {1}.
Var sum(Var x);

Var reshape(Var x, Shape shape);
/// out.shape[i] == x.shape[axes[i]].
Var permute(Var x, const std::vector<std::size_t>& axes);
/// Joins tensors that agree on every axis but `axis`.
Var concat(const std::vector<Var>& parts, std::size_t axis);

enum class Padding { same, valid };

/**
 * 2-D cross-correlation (no kernel flip).
 *
 * x: [C_in×H×W], kernel: [C_out×C_in×kh×kw]. With `same`, the input is
 * zero-padded by (k-1)/2 before and k-1-(k-1)/2 after each spatial axis and
 * the output keeps H×W; with `valid` the output is (H-kh+1)×(W-kw+1).
 */
Var conv2d(Var x, Var kernel, Padding padding);

/// Per-row matrix-vector product: out[b, :] = x[b, :] · w[b, :, :]. x: [B×K], w: [B×K×N].
Var batched_matvec(Var x, Var w);

}  // namespace hyperst::ops
