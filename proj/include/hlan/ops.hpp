#pragma once

// Differentiable tensor operations recorded on a Tape.

#include <cstdint>
#include <span>
#include <vector>

#include "hlan/tape.hpp"

namespace hlan::ad {

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T

enum class Unary { sigmoid, tanh };
enum class Binary { add, sub, mul };

Var unary(Unary op, Var x);
// Shapes must be equal, or one side must hold a single element.
Var binary(Binary op, Var a, Var b);

inline Var sigmoid(Var x) { return unary(Unary::sigmoid, x); }
inline Var tanh(Var x) { return unary(Unary::tanh, x); }
inline Var add(Var a, Var b) { return binary(Binary::add, a, b); }
inline Var sub(Var a, Var b) { return binary(Binary::sub, a, b); }
inline Var mul(Var a, Var b) { return binary(Binary::mul, a, b); }

Var scale(Var x, real factor);
// x[r x c] + bias[c] broadcast over rows.
Var add_bias(Var x, Var bias);
Var sum(Var x);
Var sum_squares(Var x);

// Max-subtracted softmax over all elements of x.
Var softmax(Var x);

// Concatenation along axis 0 (rows) or 1 (columns). Rank-1 inputs only
// support axis 0. An empty operand yields the other operand.
Var concat(Var a, Var b, int axis);

// Rows of `table` selected by `ids`.
Var gather_rows(Var table, std::span<const std::int32_t> ids);

// Rows [begin, begin + count) of x.
Var slice_rows(Var x, std::size_t begin, std::size_t count);

// Summed binary cross-entropy of sigmoid(logits) against targets, in the
// log-sum-exp form: max(s,0) - s*y + log(1 + exp(-|s|)).
Var bce_with_logits(Var logits, const Tensor& targets);

}  // namespace hlan::ad
