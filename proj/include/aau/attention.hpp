#pragma once

#include <optional>
#include <string>

#include "aau/tape.hpp"
#include "aau/window.hpp"

namespace aau {

struct LnParams {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
};

LnParams make_ln_params(ParamStore& store, const std::string& prefix, std::int64_t C);

inline Value apply_ln(Tape& t, const LnParams& p, Value x, double eps = 1e-5) {
    return layer_norm(x, t.leaf(*p.gamma), t.leaf(*p.beta), eps);
}

// Linear projection y = x W + b with W (Cin, Cout).
struct LinearParams {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
};

LinearParams make_linear_params(ParamStore& store, const std::string& prefix, std::int64_t cin,
                                std::int64_t cout, Rng& rng, bool zero_init = false);

Value apply_linear(Tape& t, const LinearParams& p, Value x);

// ---------------------------------------------------------------------------
// Multi-head attention

struct MhaParams {
    LinearParams q, k, v, out;
    int heads = 1;
};

MhaParams make_mha_params(ParamStore& store, const std::string& prefix, std::int64_t C, int heads,
                          Rng& rng);

// Learnable per-pixel relative position table for epipolar rows: row o holds
// the vector for signed offset o - (width-1); entries for +d and -d are
// independent.
struct EpTable {
    Parameter* table = nullptr; // (2*width-1, C)
    std::int64_t width = 0;
};

EpTable make_ep_table(ParamStore& store, const std::string& prefix, std::int64_t width, std::int64_t C,
                      Rng& rng);

struct AttentionOut {
    Value out;    // (B, n, C)
    Value probs;  // (B*heads, n, n) post-softmax
    Value scores; // (B*heads, n, n) pre-softmax (after bias/mask)
};

// Core scaled dot-product attention on pre-projected q/k/v of shape (B, n, C).
// bias, if given, is already materialized as (B*heads, n, n) on the tape.
// mask, if given, is a constant additive tensor (B, n, n) or (B*heads, n, n)
// of 0 / kMaskNegInf entries; fully masked query rows raise "all-masked-row".
// ep, if given, replaces plain dot products with the three-term relative
// attention (data-data + data-position + position-data, all scaled).
AttentionOut attention_core(Value q, Value k, Value v, int heads, std::optional<Value> bias,
                            const TensorF* mask, const EpTable* ep);

// Full multi-head dot-product attention: internal q/k/v projections, core,
// head concat and output projection. q_src/k_src/v_src are (B, n, C) or (n, C).
AttentionOut multi_head_attention(Tape& t, const MhaParams& p, Value q_src, Value k_src, Value v_src,
                                  std::optional<Value> bias = std::nullopt,
                                  const TensorF* mask = nullptr, const EpTable* ep = nullptr);

// Three-term relative attention scores for one epipolar row:
// e_d_q, e_d_k (w, C); returns (heads, w, w), scaled by 1/sqrt(C/heads).
Value relative_scores_eq11(Tape& t, Value e_d_q, Value e_d_k, const EpTable& ep, int heads);

// ---------------------------------------------------------------------------
// Window relative position bias

struct RelativeBiasTable {
    Parameter* table = nullptr; // ((2M-1)^2, heads)
    std::int64_t window = 0;
    int heads = 1;
};

RelativeBiasTable make_relative_bias_table(ParamStore& store, const std::string& prefix,
                                           std::int64_t M, int heads);

// Row of the table for intra-window offset (dy, dx); "offset-range" outside
// [-(M-1), M-1].
std::int64_t relative_bias_index(std::int64_t M, std::int64_t dy, std::int64_t dx);

// Expanded bias (heads, M^2, M^2); entry (h,p,q) = table[index(pos q - pos p), h].
Value relative_bias_lookup(Tape& t, const RelativeBiasTable& table);

// ---------------------------------------------------------------------------
// Window self-attention over an (h,w,C) token map: pad -> (shift) ->
// partition -> MHA with relative bias + region/pad mask -> reverse. The MAC
// counter is scoped around the projection and attention matmuls.
Value window_self_attention(Tape& t, Value x_hwc, const MhaParams& p, const RelativeBiasTable* bias,
                            std::int64_t M, std::int64_t shift);

} // namespace aau
