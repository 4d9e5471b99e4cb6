#pragma once

#include "aau/attention.hpp"

namespace aau {

// One cross-attention layer tying the left and right token streams together.
// Token maps are (rows, w, C); attention runs independently per epipolar row
// (rows are the batch dimension), so a perturbation of one row can never
// reach another row through this layer.
struct CrossParams {
    LnParams ln_r, ln_l;
    LinearParams q_r;             // from LN(right)
    LinearParams q_l, k_l, v_l;   // from LN(left)
    LinearParams k_r, v_r;        // from the updated right intermediate, no LN
    LinearParams out1, out2;      // output projections of the two attention calls
    EpTable ep;                   // shared by both calls
    bool use_ep = true;
    int heads = 1;
};

CrossParams make_cross_params(ParamStore& store, const std::string& prefix, std::int64_t C, int heads,
                              std::int64_t row_width, bool use_ep, Rng& rng);

struct CrossOut {
    Value right, left;    // residual-updated streams (rows, w, C)
    AttentionOut a1;      // right queries over left keys
    AttentionOut a2;      // left queries over right-derived keys
};

CrossOut cross_attention_layer(Tape& t, const CrossParams& p, Value right, Value left);

// Packed-state bookkeeping: X is (2, rows, w, C) with slot 0 = right, 1 = left.
Value cross_concat(Value right, Value left);
std::pair<Value, Value> cross_split(Value x);
CrossOut cross_attention_layer_packed(Tape& t, const CrossParams& p, Value x, Value* x_next);

// Head-averaged map (rows, w, w) from per-head attention tensors
// (rows*heads, w, w).
Value head_mean_maps(Value per_head, std::int64_t rows, int heads);

} // namespace aau
