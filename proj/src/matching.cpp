#include "aau/matching.hpp"

#include <cmath>

#include "aau/layout.hpp"

namespace aau {

double AssignmentMatrix::row_marginal_dev() const {
    const std::int64_t n = t.dim(0);
    const std::int64_t w = n - 1;
    double dev = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < n; ++j) s += t.at(i, j);
        dev = std::max(dev, std::abs(s - (i == w ? static_cast<double>(w) : 1.0)));
    }
    return dev;
}

double AssignmentMatrix::col_marginal_dev() const {
    const std::int64_t n = t.dim(0);
    const std::int64_t w = n - 1;
    double dev = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += t.at(i, j);
        dev = std::max(dev, std::abs(s - (j == w ? static_cast<double>(w) : 1.0)));
    }
    return dev;
}

Value sinkhorn_batched(Tape& t, Value scores, Value dustbin, int iters, double temperature) {
    const TensorF& sv = scores.val();
    require(sv.rank() == 3 && sv.dim(1) == sv.dim(2), "shape-mismatch",
            "sinkhorn scores must be (rows, w, w)");
    require(iters >= 1, "bad-config", "sinkhorn iterations must be >= 1");
    require(temperature > 0.0, "bad-config", "sinkhorn temperature must be positive");
    require(sv.all_finite() && dustbin.val().all_finite(), "non-finite-cost",
            "sinkhorn input scores contain NaN/Inf");
    const std::int64_t rows = sv.dim(0), w = sv.dim(1), n = w + 1;

    // augmented matrix: scores padded with the dustbin score on row/col w
    std::vector<std::int64_t> pad_idx(static_cast<std::size_t>(rows * n * n), -1);
    TensorF bin_mask(Shape{rows, n, n});
    std::vector<std::int64_t> bin_idx(static_cast<std::size_t>(rows * n * n), -1);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                const std::int64_t o = (r * n + i) * n + j;
                if (i < w && j < w) {
                    pad_idx[static_cast<std::size_t>(o)] = (r * w + i) * w + j;
                } else {
                    bin_mask[o] = 1.0;
                    bin_idx[static_cast<std::size_t>(o)] = 0;
                }
            }
    Value padded = gather(scores, make_index_map(std::move(pad_idx)), Shape{rows, n, n});
    Value bin_tiled = gather(dustbin, make_index_map(std::move(bin_idx)), Shape{rows, n, n});
    Value aug = add(padded, mul(bin_tiled, t.input(std::move(bin_mask))));
    aug = scale(aug, 1.0 / temperature);
    Value aug_t = transpose_last2(aug);

    // log marginals: each real pixel 1, dustbin w (identical for rows and cols)
    TensorF log_a(Shape{rows, n, 1});
    for (std::int64_t r = 0; r < rows; ++r) log_a.at(r, w, 0) = std::log(static_cast<double>(w));
    Value la_col = t.input(log_a);

    Value u = t.input(TensorF(Shape{rows, n, 1}));
    Value v = t.input(TensorF(Shape{rows, 1, n}));
    for (int it = 0; it < iters; ++it) {
        u = sub(la_col, logsumexp_lastdim(add_bcast_row(aug, v)));
        Value vt = sub(la_col, logsumexp_lastdim(add_bcast_row(aug_t, reshape(u, Shape{rows, 1, n}))));
        v = reshape(vt, Shape{rows, 1, n});
    }
    return exp_(add_bcast_row(add_bcast_col(aug, u), v));
}

AssignmentMatrix sinkhorn_ot(const TensorF& scores, double dustbin_score, int iters,
                             double temperature) {
    require(scores.rank() == 2 && scores.dim(0) == scores.dim(1), "shape-mismatch",
            "sinkhorn_ot expects a square (w, w) score matrix");
    const std::int64_t w = scores.dim(0);
    Tape t;
    Parameter bin("dustbin", TensorF::scalar(dustbin_score));
    Value s = t.input(TensorF::from({1, w, w}, scores.data));
    Value out = sinkhorn_batched(t, s, t.leaf(bin), iters, temperature);
    AssignmentMatrix m;
    m.t = TensorF::from({w + 1, w + 1}, t.val(out).data);
    return m;
}

// ---------------------------------------------------------------------------

RawRegression raw_regression(Tape& t, Value assignment, int interp_window, double occ_threshold) {
    const TensorF& tv = assignment.val();
    require(tv.rank() == 3 && tv.dim(1) == tv.dim(2), "shape-mismatch",
            "raw_regression expects (rows, w+1, w+1) assignments");
    require(interp_window >= 1 && interp_window % 2 == 1, "bad-config",
            "interp_window must be odd");
    const std::int64_t rows = tv.dim(0), n = tv.dim(1), w = n - 1;
    require(w >= 1, "shape-mismatch", "assignment has no matchable columns");
    const int half = interp_window / 2;
    const std::int64_t K = interp_window;

    std::vector<std::int64_t> win_idx(static_cast<std::size_t>(rows * w * K), -1);
    TensorF win_cols(Shape{rows, w, K});
    std::vector<std::int64_t> phi_idx(static_cast<std::size_t>(rows * w));
    TensorF occ(Shape{rows, w});

    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t i = 0; i < w; ++i) {
            std::int64_t jstar = 0;
            for (std::int64_t j = 1; j < w; ++j)
                if (tv.at(r, i, j) > tv.at(r, i, jstar)) jstar = j;
            for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t j = jstar - half + k;
                if (j < 0 || j >= w) continue;
                win_idx[static_cast<std::size_t>((r * w + i) * K + k)] = (r * n + i) * n + j;
                win_cols.at(r, i, k) = static_cast<double>(j);
            }
            phi_idx[static_cast<std::size_t>(r * w + i)] = (r * n + i) * n + w;

            double win_mass = 0.0;
            for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t j = jstar - half + k;
                if (j >= 0 && j < w) win_mass += tv.at(r, i, j);
            }
            const bool bin_dominant = tv.at(r, i, w) > tv.at(r, i, jstar);
            occ.at(r, i) = (bin_dominant || win_mass < occ_threshold) ? 1.0 : 0.0;
        }
    }

    Value gathered = gather(assignment, make_index_map(std::move(win_idx)), Shape{rows, w, K});
    Value den = sum_lastdim(gathered);                                // (rows, w)
    Value num = sum_lastdim(mul(gathered, t.input(std::move(win_cols))));
    Value subpix = div(num, den);

    TensorF icols(Shape{rows, w});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t i = 0; i < w; ++i) icols.at(r, i) = static_cast<double>(i);

    RawRegression out;
    out.d_raw = sub(t.input(std::move(icols)), subpix);
    out.confidence = den;
    out.t_phi = gather(assignment, make_index_map(std::move(phi_idx)), Shape{rows, w});
    out.occ_flags = occ;
    out.d_raw_out = TensorF(Shape{rows, w});
    const TensorF& draw = t.val(out.d_raw);
    for (std::int64_t i = 0; i < draw.numel(); ++i)
        out.d_raw_out[i] = occ[i] > 0.5 ? 0.0 : std::max(0.0, draw[i]);
    return out;
}

// ---------------------------------------------------------------------------

Value bilinear_upsample_tokens(Value x, std::int64_t H, std::int64_t W, int stride) {
    Tape& t = *x.tape;
    const TensorF& v = x.val();
    require(v.rank() == 2, "shape-mismatch", "bilinear_upsample_tokens expects (rows, w)");
    const std::int64_t rows = v.dim(0), w = v.dim(1);
    require(rows == (H + stride - 1) / stride && w == (W + stride - 1) / stride, "shape-mismatch",
            "token grid does not match target size and stride");

    std::vector<std::int64_t> i00(static_cast<std::size_t>(H * W)), i01(i00.size()), i10(i00.size()),
        i11(i00.size());
    TensorF w00(Shape{H, W}), w01(Shape{H, W}), w10(Shape{H, W}), w11(Shape{H, W});
    auto clampi = [](std::int64_t a, std::int64_t hi) { return std::min(std::max<std::int64_t>(a, 0), hi); };
    for (std::int64_t y = 0; y < H; ++y) {
        double py = (static_cast<double>(y) + 0.5) / stride - 0.5;
        py = std::min(std::max(py, 0.0), static_cast<double>(rows - 1));
        const auto y0 = static_cast<std::int64_t>(std::floor(py));
        const std::int64_t y1 = clampi(y0 + 1, rows - 1);
        const double fy = py - static_cast<double>(y0);
        for (std::int64_t x2 = 0; x2 < W; ++x2) {
            double px = (static_cast<double>(x2) + 0.5) / stride - 0.5;
            px = std::min(std::max(px, 0.0), static_cast<double>(w - 1));
            const auto x0 = static_cast<std::int64_t>(std::floor(px));
            const std::int64_t x1 = clampi(x0 + 1, w - 1);
            const double fx = px - static_cast<double>(x0);
            const std::size_t o = static_cast<std::size_t>(y * W + x2);
            i00[o] = y0 * w + x0;
            i01[o] = y0 * w + x1;
            i10[o] = y1 * w + x0;
            i11[o] = y1 * w + x1;
            w00[static_cast<std::int64_t>(o)] = (1 - fy) * (1 - fx);
            w01[static_cast<std::int64_t>(o)] = (1 - fy) * fx;
            w10[static_cast<std::int64_t>(o)] = fy * (1 - fx);
            w11[static_cast<std::int64_t>(o)] = fy * fx;
        }
    }
    Shape os{H, W};
    Value acc = mul(gather(x, make_index_map(std::move(i00)), os), t.input(std::move(w00)));
    acc = add(acc, mul(gather(x, make_index_map(std::move(i01)), os), t.input(std::move(w01))));
    acc = add(acc, mul(gather(x, make_index_map(std::move(i10)), os), t.input(std::move(w10))));
    acc = add(acc, mul(gather(x, make_index_map(std::move(i11)), os), t.input(std::move(w11))));
    return acc;
}

ContextAdjustParams make_context_adjust_params(ParamStore& store, int channels, int blocks,
                                               bool use_occ_input, Rng& rng) {
    ContextAdjustParams p;
    p.channels = channels;
    p.use_occ_input = use_occ_input;
    const std::int64_t cin = 3 + 1 + (use_occ_input ? 1 : 0);
    p.in_w = &store.create_trunc_normal("ctx.in.w", {channels, cin, 3, 3}, rng);
    p.in_b = &store.create_zeros("ctx.in.b", {channels});
    for (int b = 0; b < blocks; ++b) {
        ContextAdjustParams::Block blk;
        const std::string prefix = "ctx.block" + std::to_string(b);
        blk.w1 = &store.create_trunc_normal(prefix + ".c1.w", {channels, channels, 3, 3}, rng);
        blk.b1 = &store.create_zeros(prefix + ".c1.b", {channels});
        blk.w2 = &store.create_zeros(prefix + ".c2.w", {channels, channels, 3, 3});
        blk.b2 = &store.create_zeros(prefix + ".c2.b", {channels});
        p.blocks.push_back(blk);
    }
    p.disp_w = &store.create_zeros("ctx.disp.w", {1, channels, 3, 3});
    p.disp_b = &store.create_zeros("ctx.disp.b", {1});
    p.occ_w = &store.create_trunc_normal("ctx.occ.w", {1, channels, 3, 3}, rng);
    p.occ_b = &store.create_zeros("ctx.occ.b", {1});
    return p;
}

ContextOut context_adjust(Tape& t, const ContextAdjustParams& p, Value d_raw,
                          const TensorF& occ_soft, Value left_img, int stride) {
    const TensorF& img = left_img.val();
    require(img.rank() == 3 && img.dim(2) == 3, "shape-mismatch", "context_adjust image must be (H,W,3)");
    const std::int64_t H = img.dim(0), W = img.dim(1);
    require(same_shape(occ_soft.shape, d_raw.val().shape), "shape-mismatch",
            "context_adjust occlusion map vs raw disparity");

    Value d_base = bilinear_upsample_tokens(scale(d_raw, static_cast<double>(stride)), H, W, stride);
    Value occ_up;
    if (p.use_occ_input) {
        Tape& tt = t;
        occ_up = bilinear_upsample_tokens(tt.input(occ_soft), H, W, stride);
    }

    Value img_chw = hwc_to_chw(left_img);
    Value x = concat0(img_chw, reshape(d_base, Shape{1, H, W}));
    if (p.use_occ_input) x = concat0(x, reshape(occ_up, Shape{1, H, W}));

    x = relu(conv2d(x, t.leaf(*p.in_w), t.leaf(*p.in_b), 1, 1));
    for (const auto& blk : p.blocks) {
        Value y = relu(conv2d(x, t.leaf(*blk.w1), t.leaf(*blk.b1), 1, 1));
        y = conv2d(y, t.leaf(*blk.w2), t.leaf(*blk.b2), 1, 1);
        x = relu(add(x, y));
    }
    Value disp_res = conv2d(x, t.leaf(*p.disp_w), t.leaf(*p.disp_b), 1, 1);
    Value occ_logit = conv2d(x, t.leaf(*p.occ_w), t.leaf(*p.occ_b), 1, 1);

    ContextOut out;
    out.d_base = d_base;
    out.d_final = add(d_base, reshape(disp_res, Shape{H, W}));
    out.occ_final = sigmoid(reshape(occ_logit, Shape{H, W}));
    return out;
}

} // namespace aau
