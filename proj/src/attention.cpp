#include "aau/attention.hpp"

#include <cmath>

namespace aau {

namespace {

// (B, n, C) -> (B*heads, n, Ch); slot b*heads + h
IndexMap split_heads_map(std::int64_t B, std::int64_t n, std::int64_t C, int heads) {
    const std::int64_t Ch = C / heads;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(B * n * C));
    std::size_t o = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t c = 0; c < Ch; ++c)
                    idx[o++] = (b * n + i) * C + h * Ch + c;
    return make_index_map(std::move(idx));
}

// (B*heads, n, Ch) -> (B, n, C)
IndexMap merge_heads_map(std::int64_t B, std::int64_t n, std::int64_t C, int heads) {
    const std::int64_t Ch = C / heads;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(B * n * C));
    std::size_t o = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t h = 0; h < heads; ++h)
                for (std::int64_t c = 0; c < Ch; ++c)
                    idx[o++] = ((b * heads + h) * n + i) * Ch + c;
    return make_index_map(std::move(idx));
}

Value as_batched(Value x) {
    const TensorF& v = x.val();
    if (v.rank() == 2) return reshape(x, Shape{1, v.dim(0), v.dim(1)});
    require(v.rank() == 3, "shape-mismatch", "attention stream must be (n,C) or (B,n,C)");
    return x;
}

} // namespace

LnParams make_ln_params(ParamStore& store, const std::string& prefix, std::int64_t C) {
    LnParams p;
    p.gamma = &store.create_full(prefix + ".gamma", {C}, 1.0);
    p.beta = &store.create_zeros(prefix + ".beta", {C});
    return p;
}

LinearParams make_linear_params(ParamStore& store, const std::string& prefix, std::int64_t cin,
                                std::int64_t cout, Rng& rng, bool zero_init) {
    LinearParams p;
    p.w = zero_init ? &store.create_zeros(prefix + ".w", {cin, cout})
                    : &store.create_trunc_normal(prefix + ".w", {cin, cout}, rng);
    p.b = &store.create_zeros(prefix + ".b", {cout});
    return p;
}

Value apply_linear(Tape& t, const LinearParams& p, Value x) {
    return add_bias(matmul(x, t.leaf(*p.w)), t.leaf(*p.b));
}

MhaParams make_mha_params(ParamStore& store, const std::string& prefix, std::int64_t C, int heads,
                          Rng& rng) {
    require(heads >= 1 && C % heads == 0, "bad-heads",
            prefix + ": channels " + std::to_string(C) + " not divisible by heads " + std::to_string(heads));
    MhaParams p;
    p.q = make_linear_params(store, prefix + ".q", C, C, rng);
    p.k = make_linear_params(store, prefix + ".k", C, C, rng);
    p.v = make_linear_params(store, prefix + ".v", C, C, rng);
    p.out = make_linear_params(store, prefix + ".out", C, C, rng);
    p.heads = heads;
    return p;
}

EpTable make_ep_table(ParamStore& store, const std::string& prefix, std::int64_t width, std::int64_t C,
                      Rng& rng) {
    EpTable e;
    e.table = &store.create_trunc_normal(prefix + ".ep", {2 * width - 1, C}, rng);
    e.width = width;
    return e;
}

namespace {

// Adds the data-position and position-data terms of the three-term relative
// attention to per-head scores. qh/kh: (BH, n, Ch). Returns (BH, n, n).
Value ep_terms(Tape& t, Value qh, Value kh, const EpTable& ep, int heads) {
    const TensorF& qv = qh.val();
    const std::int64_t BH = qv.dim(0), n = qv.dim(1), Ch = qv.dim(2);
    require(ep.width >= n, "offset-range",
            "relative position table built for width " + std::to_string(ep.width) +
                " cannot cover row width " + std::to_string(n));
    const std::int64_t O = 2 * ep.width - 1;
    const std::int64_t C = Ch * heads;

    // Per-slot head copy of the table: (BH, O, Ch)
    std::vector<std::int64_t> tile(static_cast<std::size_t>(BH * O * Ch));
    std::size_t w = 0;
    for (std::int64_t s = 0; s < BH; ++s) {
        const std::int64_t h = s % heads;
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t c = 0; c < Ch; ++c) tile[w++] = o * C + h * Ch + c;
    }
    Value table = t.leaf(*ep.table);
    Value ph = gather(table, make_index_map(std::move(tile)), Shape{BH, O, Ch});

    Value qp = matmul(qh, transpose_last2(ph)); // (BH, n, O)
    Value pk = matmul(ph, transpose_last2(kh)); // (BH, O, n)

    // term2[s,i,j] = qp[s, i, (j-i)+width-1];  term3[s,i,j] = pk[s, (i-j)+width-1, j]
    std::vector<std::int64_t> i2(static_cast<std::size_t>(BH * n * n));
    std::vector<std::int64_t> i3(static_cast<std::size_t>(BH * n * n));
    w = 0;
    for (std::int64_t s = 0; s < BH; ++s)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j, ++w) {
                i2[w] = (s * n + i) * O + (j - i + ep.width - 1);
                i3[w] = (s * O + (i - j + ep.width - 1)) * n + j;
            }
    Value t2 = gather(qp, make_index_map(std::move(i2)), Shape{BH, n, n});
    Value t3 = gather(pk, make_index_map(std::move(i3)), Shape{BH, n, n});
    return add(t2, t3);
}

} // namespace

AttentionOut attention_core(Value q, Value k, Value v, int heads, std::optional<Value> bias,
                            const TensorF* mask, const EpTable* ep) {
    Tape& t = *q.tape;
    q = as_batched(q);
    k = as_batched(k);
    v = as_batched(v);
    const TensorF& qv = q.val();
    const TensorF& kv = k.val();
    const std::int64_t B = qv.dim(0), n = qv.dim(1), C = qv.dim(2);
    const std::int64_t m = kv.dim(1);
    require(kv.dim(0) == B && kv.dim(2) == C, "shape-mismatch", "attention_core q/k");
    require(same_shape(v.val().shape, kv.shape), "shape-mismatch", "attention_core k/v");
    require(C % heads == 0, "bad-heads", "attention_core channels vs heads");
    const std::int64_t Ch = C / heads;

    Value qh = gather(q, split_heads_map(B, n, C, heads), Shape{B * heads, n, Ch});
    Value kh = gather(k, split_heads_map(B, m, C, heads), Shape{B * heads, m, Ch});
    Value vh = gather(v, split_heads_map(B, m, C, heads), Shape{B * heads, m, Ch});

    Value scores = matmul(qh, transpose_last2(kh)); // (BH, n, m)
    if (ep) {
        require(n == m, "shape-mismatch", "relative attention needs square score matrix");
        scores = add(scores, ep_terms(t, qh, kh, *ep, heads));
    }
    scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(Ch)));
    if (bias) scores = add(scores, *bias);

    if (mask && mask->numel() > 0) {
        require(mask->rank() == 3 && mask->dim(1) == n && mask->dim(2) == m, "shape-mismatch",
                "attention mask shape " + shape_str(mask->shape));
        TensorF full(Shape{B * heads, n, m});
        if (mask->dim(0) == B * heads) {
            full = *mask;
        } else {
            require(mask->dim(0) == B || mask->dim(0) == 1, "shape-mismatch", "attention mask batch");
            for (std::int64_t s = 0; s < B * heads; ++s) {
                const std::int64_t b = mask->dim(0) == 1 ? 0 : s / heads;
                for (std::int64_t i = 0; i < n * m; ++i)
                    full[s * n * m + i] = (*mask)[b * n * m + i];
            }
        }
        for (std::int64_t s = 0; s < B * heads; ++s)
            for (std::int64_t i = 0; i < n; ++i) {
                bool any = false;
                for (std::int64_t j = 0; j < m && !any; ++j) any = full.at(s, i, j) == 0.0;
                require(any, "all-masked-row",
                        "query row " + std::to_string(i) + " of batch slot " + std::to_string(s) +
                            " has no unmasked keys");
            }
        scores = add(scores, t.input(std::move(full)));
    }

    Value probs = softmax_lastdim(scores);
    Value ctx = matmul(probs, vh); // (BH, n, Ch)
    Value out = gather(ctx, merge_heads_map(B, n, C, heads), Shape{B, n, C});
    return AttentionOut{out, probs, scores};
}

AttentionOut multi_head_attention(Tape& t, const MhaParams& p, Value q_src, Value k_src, Value v_src,
                                  std::optional<Value> bias, const TensorF* mask, const EpTable* ep) {
    Value q = apply_linear(t, p.q, as_batched(q_src));
    Value k = apply_linear(t, p.k, as_batched(k_src));
    Value v = apply_linear(t, p.v, as_batched(v_src));
    AttentionOut core = attention_core(q, k, v, p.heads, bias, mask, ep);
    core.out = apply_linear(t, p.out, core.out);
    return core;
}

Value relative_scores_eq11(Tape& t, Value e_d_q, Value e_d_k, const EpTable& ep, int heads) {
    const TensorF& qv = e_d_q.val();
    require(qv.rank() == 2, "shape-mismatch", "relative_scores_eq11 expects (w, C)");
    const std::int64_t w = qv.dim(0), C = qv.dim(1);
    require(C % heads == 0, "bad-heads", "relative_scores_eq11 channels vs heads");
    const std::int64_t Ch = C / heads;
    require(ep.width >= w, "offset-range", "table too small for width " + std::to_string(w));

    Value qh = gather(as_batched(e_d_q), split_heads_map(1, w, C, heads), Shape{heads, w, Ch});
    Value kh = gather(as_batched(e_d_k), split_heads_map(1, w, C, heads), Shape{heads, w, Ch});
    Value scores = add(matmul(qh, transpose_last2(kh)), ep_terms(t, qh, kh, ep, heads));
    return scale(scores, 1.0 / std::sqrt(static_cast<double>(Ch)));
}

RelativeBiasTable make_relative_bias_table(ParamStore& store, const std::string& prefix,
                                           std::int64_t M, int heads) {
    RelativeBiasTable t;
    t.table = &store.create_zeros(prefix + ".rel_bias", {(2 * M - 1) * (2 * M - 1), heads});
    t.window = M;
    t.heads = heads;
    return t;
}

std::int64_t relative_bias_index(std::int64_t M, std::int64_t dy, std::int64_t dx) {
    require(dy >= -(M - 1) && dy <= M - 1 && dx >= -(M - 1) && dx <= M - 1, "offset-range",
            "relative offset (" + std::to_string(dy) + "," + std::to_string(dx) +
                ") outside window of size " + std::to_string(M));
    return (dy + M - 1) * (2 * M - 1) + (dx + M - 1);
}

Value relative_bias_lookup(Tape& t, const RelativeBiasTable& table) {
    const std::int64_t M = table.window;
    const std::int64_t n = M * M;
    const int heads = table.heads;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(heads * n * n));
    std::size_t o = 0;
    for (int h = 0; h < heads; ++h)
        for (std::int64_t p = 0; p < n; ++p)
            for (std::int64_t q = 0; q < n; ++q) {
                const std::int64_t dy = q / M - p / M;
                const std::int64_t dx = q % M - p % M;
                idx[o++] = relative_bias_index(M, dy, dx) * heads + h;
            }
    return gather(t.leaf(*table.table), make_index_map(std::move(idx)), Shape{heads, n, n});
}

Value window_self_attention(Tape& t, Value x_hwc, const MhaParams& p, const RelativeBiasTable* bias,
                            std::int64_t M, std::int64_t shift) {
    const TensorF& xv = x_hwc.val();
    const std::int64_t h = xv.dim(0), w = xv.dim(1);
    const WindowGrid grid = make_window_grid(h, w, M);
    const std::int64_t nw = grid.num_windows();
    const std::int64_t n = M * M;

    Value windows = window_partition(x_hwc, grid, shift);

    std::optional<Value> bias_tiled;
    if (bias) {
        require(bias->window == M && bias->heads == p.heads, "grid-mismatch",
                "relative bias table built for different window/heads");
        Value b = relative_bias_lookup(t, *bias); // (heads, n, n)
        std::vector<std::int64_t> idx(static_cast<std::size_t>(nw * p.heads * n * n));
        std::size_t o = 0;
        for (std::int64_t wi = 0; wi < nw; ++wi)
            for (int hd = 0; hd < p.heads; ++hd)
                for (std::int64_t i = 0; i < n * n; ++i) idx[o++] = hd * n * n + i;
        bias_tiled = gather(b, make_index_map(std::move(idx)), Shape{nw * p.heads, n, n});
    }

    TensorF mask = shifted_window_mask(grid, shift);

    AttentionOut attn;
    {
        MacCounter::Scope scoped(true);
        attn = multi_head_attention(t, p, windows, windows, windows, bias_tiled,
                                    mask.numel() ? &mask : nullptr);
    }
    return window_reverse(attn.out, grid, shift);
}

} // namespace aau
