#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cpcssl/tape.hpp"

/// Differentiable kernels. Every function records one node (or a short fixed
/// chain) on the tape of its first argument and registers its gradient.
namespace cpcssl::ad {

Var matmul(Var a, Var b);
/// w[m x n] times x[n] -> [m].
Var matvec(Var w, Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }

Var exp(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Elementwise clamp; the gradient is zero where the input lies outside [lo, hi].
Var clamp(Var a, double lo, double hi);

/// Sum of all entries -> scalar.
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
/// Entry i of a flat tensor -> scalar.
Var pick(Var a, Index i);

Var reshape(Var a, Shape shape);
/// Flattens and joins the inputs into one rank-1 tensor.
Var concat(const std::vector<Var>& parts);
/// Row i of a matrix -> rank-1.
Var row(Var m, Index i);
/// Rank-1 inputs of equal length -> matrix with one row per input.
Var stack_rows(const std::vector<Var>& rows);
/// Rows picked from several matrices sharing a column count:
/// output row r is rows[refs[r].first] row refs[r].second.
Var gather_rows(const std::vector<Var>& mats, std::span<const std::pair<int, Index>> refs);
/// Column-wise mean of a matrix -> rank-1.
Var mean_rows(Var m);

/// Stable log-softmax over all entries of a flat tensor.
Var log_softmax(Var logits);
Var softmax(Var logits);

/// Valid cross-correlation. input [C x H x W], kernels [F x C x h x w],
/// optional bias [F] (pass an unbound Var to skip). Output [F x H' x W'] with
/// H' = (H - h) / stride + 1.
Var conv2d(Var input, Var kernels, Var bias, Index stride);
/// Max over every axis but the first: [F x ...] -> [F]. Ties pick the first position.
Var max_positions(Var a);
/// Embedding lookup, channels first: table [V x E], ids of length L -> [E x L].
Var embed(Var table, std::span<const Index> ids);

struct GruWeights {
  Var w_update, b_update;        // [D x (E + D)], [D]
  Var w_reset, b_reset;          // [D x (E + D)], [D]
  Var w_candidate, b_candidate;  // [D x (E + D)], [D]
};

/// h = (1 - u) * h_prev + u * h_cand with
/// u = sigmoid(W_u [x; h_prev] + b_u), r = sigmoid(W_r [x; h_prev] + b_r),
/// h_cand = tanh(W_h [x; r * h_prev] + b_h).
Var gru_cell(Var h_prev, Var x, const GruWeights& w);

}  // namespace cpcssl::ad
