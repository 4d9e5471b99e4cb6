#include "aau/cross.hpp"

namespace aau {

CrossParams make_cross_params(ParamStore& store, const std::string& prefix, std::int64_t C, int heads,
                              std::int64_t row_width, bool use_ep, Rng& rng) {
    CrossParams p;
    p.ln_r = make_ln_params(store, prefix + ".ln_r", C);
    p.ln_l = make_ln_params(store, prefix + ".ln_l", C);
    p.q_r = make_linear_params(store, prefix + ".q_r", C, C, rng);
    p.q_l = make_linear_params(store, prefix + ".q_l", C, C, rng);
    p.k_l = make_linear_params(store, prefix + ".k_l", C, C, rng);
    p.v_l = make_linear_params(store, prefix + ".v_l", C, C, rng);
    p.k_r = make_linear_params(store, prefix + ".k_r", C, C, rng);
    p.v_r = make_linear_params(store, prefix + ".v_r", C, C, rng);
    p.out1 = make_linear_params(store, prefix + ".out1", C, C, rng);
    p.out2 = make_linear_params(store, prefix + ".out2", C, C, rng);
    p.use_ep = use_ep;
    if (use_ep) p.ep = make_ep_table(store, prefix, row_width, C, rng);
    p.heads = heads;
    return p;
}

CrossOut cross_attention_layer(Tape& t, const CrossParams& p, Value right, Value left) {
    const TensorF& rv = right.val();
    const TensorF& lv = left.val();
    require(rv.rank() == 3 && lv.rank() == 3, "shape-mismatch", "cross streams must be (rows,w,C)");
    require(same_shape(rv.shape, lv.shape), "epipolar-mismatch",
            "left/right row maps differ: " + shape_str(lv.shape) + " vs " + shape_str(rv.shape));

    const EpTable* ep = p.use_ep ? &p.ep : nullptr;

    Value rn = apply_ln(t, p.ln_r, right);
    Value ln = apply_ln(t, p.ln_l, left);
    Value q_r = apply_linear(t, p.q_r, rn);
    Value q_l = apply_linear(t, p.q_l, ln);
    Value k_l = apply_linear(t, p.k_l, ln);
    Value v_l = apply_linear(t, p.v_l, ln);

    AttentionOut a1 = attention_core(q_r, k_l, v_l, p.heads, std::nullopt, nullptr, ep);
    Value r_hat = apply_linear(t, p.out1, a1.out);

    Value k_r = apply_linear(t, p.k_r, r_hat);
    Value v_r = apply_linear(t, p.v_r, r_hat);

    AttentionOut a2 = attention_core(q_l, k_r, v_r, p.heads, std::nullopt, nullptr, ep);
    Value l_hat = apply_linear(t, p.out2, a2.out);

    CrossOut out;
    out.right = add(right, r_hat);
    out.left = add(left, l_hat);
    out.a1 = a1;
    out.a2 = a2;
    return out;
}

Value cross_concat(Value right, Value left) {
    const Shape& s = right.shape();
    Shape ext = s;
    ext.insert(ext.begin(), 1);
    return concat0(reshape(right, ext), reshape(left, ext));
}

std::pair<Value, Value> cross_split(Value x) {
    const TensorF& xv = x.val();
    require(xv.rank() == 4 && xv.dim(0) == 2, "shape-mismatch", "packed cross state must be (2,rows,w,C)");
    const std::int64_t n = xv.numel() / 2;
    Shape half(xv.shape.begin() + 1, xv.shape.end());
    std::vector<std::int64_t> ir(static_cast<std::size_t>(n)), il(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        ir[static_cast<std::size_t>(i)] = i;
        il[static_cast<std::size_t>(i)] = n + i;
    }
    return {gather(x, make_index_map(std::move(ir)), half), gather(x, make_index_map(std::move(il)), half)};
}

CrossOut cross_attention_layer_packed(Tape& t, const CrossParams& p, Value x, Value* x_next) {
    auto [right, left] = cross_split(x);
    CrossOut out = cross_attention_layer(t, p, right, left);
    if (x_next) *x_next = cross_concat(out.right, out.left);
    return out;
}

Value head_mean_maps(Value per_head, std::int64_t rows, int heads) {
    const TensorF& v = per_head.val();
    require(v.rank() == 3 && v.dim(0) == rows * heads, "shape-mismatch", "head_mean_maps input");
    const std::int64_t n = v.dim(1), m = v.dim(2);
    Value r = reshape(per_head, Shape{rows, heads, n * m});
    return reshape(mean_axis1(r), Shape{rows, n, m});
}

} // namespace aau
