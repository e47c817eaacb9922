#pragma once

// Fused differentiable building blocks for the hierarchical encoder. Each has
// a hand-written backward pass; the unit tests check them against the
// primitive-op compositions in ops.hpp and against finite differences.

#include <cstdint>
#include <span>

#include "hlan/ops.hpp"

namespace hlan::ad {

// GRU weights in row-vector convention: r = sigma(x W_er + h W_hr + b_r).
struct GruWeights {
  Var w_er, w_ez, w_ec;  // [d_in x d_h]
  Var w_hr, w_hz, w_hc;  // [d_h x d_h]
  Var b_r, b_z;          // [d_h]
};

// One GRU step built from primitive ops:
//   r = sigma(e W_er + h W_hr + b_r)
//   z = sigma(e W_ez + h W_hz + b_z)
//   c = tanh(e W_ec + (r * h) W_hc)
//   h' = (1 - z) * h + z * c
Var gru_cell(Var e, Var h_prev, const GruWeights& w);

// Runs `batch` independent sequences of `steps` positions through one GRU
// direction. Row b*steps + t of `x` is position t of sequence b. Positions with
// mask 0 produce zero rows and do not advance the recurrence, so a sequence
// behaves as if its masked-out positions were absent. `reverse` reads each
// sequence right to left. Initial state is zero.
Var gru_sequence(Var x, const GruWeights& w, std::size_t batch, std::size_t steps,
                 std::span<const std::uint8_t> mask, bool reverse);

// Column-wise softmax within consecutive row segments of length `seg_len`:
// scores is [G*seg_len x L] and each (segment, column) pair is normalized over
// its unmasked rows. Masked rows get weight 0; an all-masked segment is all 0.
Var segment_softmax(Var scores, std::size_t seg_len, std::span<const std::uint8_t> mask);

// Attention pooling. alpha is [G*seg_len x L]. Output row l*G + g is
//   sum_t alpha[g*seg_len + t, l] * values[row(l, g, t)]
// where row = g*seg_len + t when `shared_values`, else (l*G + g)*seg_len + t.
Var segment_pool(Var alpha, Var values, std::size_t seg_len, bool shared_values);

// u is [B*seg_len x d], ctx is [B x d]. Output [seg_len x B] with
// out[t, b] = u[b*seg_len + t] . ctx[b].
Var grouped_rowdot(Var u, Var ctx, std::size_t seg_len);

}  // namespace hlan::ad
