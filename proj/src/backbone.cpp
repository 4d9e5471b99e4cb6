#include "aau/backbone.hpp"

#include <cmath>

#include "aau/layout.hpp"

namespace aau {

int ModelConfig::heads_at(int scale) const {
    if (!heads_per_scale.empty()) {
        require(scale < static_cast<int>(heads_per_scale.size()), "bad-config",
                "heads_per_scale shorter than num_scales");
        return heads_per_scale[static_cast<std::size_t>(scale)];
    }
    const std::int64_t base = std::max<std::int64_t>(1, embed_dim / 16);
    return static_cast<int>(base << scale);
}

void ModelConfig::validate() const {
    require(embed_dim >= 1, "bad-config", "embed_dim must be positive");
    require(window >= 1, "bad-config", "window must be positive");
    require(stride >= 1, "bad-config", "stride must be positive");
    require(swin_blocks_per_rstb >= 0 && swin_blocks_per_rstb % 2 == 0, "bad-depth",
            "swin_blocks_per_rstb must be even (WSA and S-WSA alternate in pairs)");
    require(num_scales >= 0, "bad-config", "num_scales must be non-negative");
    require(skip_count >= 0 && skip_count <= std::max(0, num_scales - 1), "bad-config",
            "skip_count must lie in [0, num_scales-1]");
    require(max_interp_window >= 1 && max_interp_window % 2 == 1, "bad-config",
            "max_interp_window must be odd");
    require(rstb_conv_kernel == 1 || rstb_conv_kernel == 3, "bad-config",
            "rstb_conv_kernel must be 1 or 3");
    require(mlp_ratio >= 1, "bad-config", "mlp_ratio must be >= 1");
    require(sinkhorn_iters >= 1, "bad-config", "sinkhorn_iters must be >= 1");
    require(sinkhorn_temperature > 0.0, "bad-config", "sinkhorn_temperature must be positive");
    require(input_h >= 1 && input_w >= 1, "bad-config", "nominal input size must be positive");
    require(ctx_channels >= 1 && ctx_blocks >= 0, "bad-config", "context adjustment config");
    for (int i = 0; i < num_scales; ++i) {
        const int h = heads_at(i);
        require(h >= 1 && channels_at(i) % h == 0, "bad-config",
                "channels at scale " + std::to_string(i) + " not divisible by heads");
    }
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    if (name == "base" || name == "middle" || name == "large") {
        c.swin_blocks_per_rstb = name == "base" ? 2 : (name == "middle" ? 4 : 6);
        return c;
    }
    if (name == "toy") {
        c.embed_dim = 16;
        c.window = 4;
        c.stride = 2;
        c.swin_blocks_per_rstb = 2;
        c.num_scales = 2;
        c.skip_count = 1;
        c.input_h = 48;
        c.input_w = 96;
        return c;
    }
    fail("bad-config", "unknown preset '" + name + "'");
}

std::vector<StageShape> stage_shapes(const ModelConfig& cfg, std::int64_t H, std::int64_t W) {
    std::vector<StageShape> out;
    std::int64_t h = (H + cfg.stride - 1) / cfg.stride;
    std::int64_t w = (W + cfg.stride - 1) / cfg.stride;
    for (int i = 0; i < cfg.num_scales; ++i) {
        out.push_back(StageShape{h, w, cfg.channels_at(i)});
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Swin block / RSTB

SwinBlockParams make_swin_block_params(ParamStore& store, const std::string& prefix, std::int64_t C,
                                       int heads, std::int64_t M, std::int64_t shift, bool use_bias,
                                       int mlp_ratio, Rng& rng) {
    SwinBlockParams p;
    p.ln1 = make_ln_params(store, prefix + ".ln1", C);
    p.attn = make_mha_params(store, prefix + ".attn", C, heads, rng);
    if (use_bias) p.bias = make_relative_bias_table(store, prefix + ".attn", M, heads);
    p.use_bias = use_bias;
    p.ln2 = make_ln_params(store, prefix + ".ln2", C);
    p.fc1 = make_linear_params(store, prefix + ".mlp.fc1", C, C * mlp_ratio, rng);
    p.fc2 = make_linear_params(store, prefix + ".mlp.fc2", C * mlp_ratio, C, rng);
    p.window = M;
    p.shift = shift;
    return p;
}

Value swin_block_forward(Tape& t, const SwinBlockParams& p, Value x_hwc) {
    Value a = window_self_attention(t, apply_ln(t, p.ln1, x_hwc), p.attn,
                                    p.use_bias ? &p.bias : nullptr, p.window, p.shift);
    Value y = add(x_hwc, a);
    Value m = apply_linear(t, p.fc1, apply_ln(t, p.ln2, y));
    m = apply_linear(t, p.fc2, gelu(m));
    return add(y, m);
}

RstbParams make_rstb_params(ParamStore& store, const std::string& prefix, std::int64_t C, int heads,
                            std::int64_t M, int depth, bool use_bias, int mlp_ratio, int conv_kernel,
                            Rng& rng) {
    require(depth >= 0 && depth % 2 == 0, "bad-depth",
            prefix + ": swin block count must be even, got " + std::to_string(depth));
    RstbParams p;
    for (int j = 0; j < depth; ++j) {
        const std::int64_t shift = (j % 2 == 1) ? M / 2 : 0;
        p.blocks.push_back(make_swin_block_params(store, prefix + ".blk" + std::to_string(j), C, heads,
                                                  M, shift, use_bias, mlp_ratio, rng));
    }
    p.conv_w = &store.create_trunc_normal(prefix + ".conv.w", {C, C, conv_kernel, conv_kernel}, rng);
    p.conv_b = &store.create_zeros(prefix + ".conv.b", {C});
    p.conv_kernel = conv_kernel;
    return p;
}

Value rstb_forward(Tape& t, const RstbParams& p, Value x_hwc) {
    Value y = x_hwc;
    for (const auto& blk : p.blocks) y = swin_block_forward(t, blk, y);
    Value c = conv2d(hwc_to_chw(y), t.leaf(*p.conv_w), t.leaf(*p.conv_b), 1, p.conv_kernel / 2);
    return add(x_hwc, chw_to_hwc(c));
}

// ---------------------------------------------------------------------------
// Patch merging / expanding

PatchMergeParams make_patch_merge_params(ParamStore& store, const std::string& prefix, std::int64_t c,
                                         Rng& rng) {
    return PatchMergeParams{make_linear_params(store, prefix + ".proj", 4 * c, 2 * c, rng)};
}

PatchExpandParams make_patch_expand_params(ParamStore& store, const std::string& prefix, std::int64_t c,
                                           Rng& rng) {
    return PatchExpandParams{make_linear_params(store, prefix + ".proj", c, 2 * c, rng)};
}

Value patch_merge(Tape& t, const PatchMergeParams& p, Value x, PadRecord* rec) {
    const TensorF& v = x.val();
    require(v.rank() == 3, "shape-mismatch", "patch_merge input must be (h,w,c)");
    const std::int64_t h = v.dim(0), w = v.dim(1), c = v.dim(2);
    const std::int64_t h2 = (h + 1) / 2, w2 = (w + 1) / 2;
    if (rec) *rec = PadRecord{h, w};

    static constexpr std::int64_t kDy[4] = {0, 0, 1, 1};
    static constexpr std::int64_t kDx[4] = {0, 1, 0, 1};
    std::vector<std::int64_t> idx(static_cast<std::size_t>(h2 * w2 * 4 * c));
    std::size_t o = 0;
    for (std::int64_t oy = 0; oy < h2; ++oy)
        for (std::int64_t ox = 0; ox < w2; ++ox)
            for (int b = 0; b < 4; ++b) {
                const std::int64_t iy = 2 * oy + kDy[b], ix = 2 * ox + kDx[b];
                for (std::int64_t cc = 0; cc < c; ++cc)
                    idx[o++] = (iy < h && ix < w) ? (iy * w + ix) * c + cc : -1;
            }
    Value cat = gather(x, make_index_map(std::move(idx)), Shape{h2, w2, 4 * c});
    return apply_linear(t, p.proj, cat);
}

Value patch_expand(Tape& t, const PatchExpandParams& p, Value x, bool strip_pads,
                   const PadRecord* rec) {
    const TensorF& v = x.val();
    require(v.rank() == 3, "shape-mismatch", "patch_expand input must be (h,w,c)");
    const std::int64_t h = v.dim(0), w = v.dim(1), c = v.dim(2);
    require(c % 2 == 0, "shape-mismatch", "patch_expand channels must be even");
    if (strip_pads) require(rec != nullptr, "pad-record-missing", "patch_expand asked to strip pads");
    const std::int64_t th = strip_pads ? rec->in_h : 2 * h;
    const std::int64_t tw = strip_pads ? rec->in_w : 2 * w;
    require(th <= 2 * h && th >= 2 * h - 1 && tw <= 2 * w && tw >= 2 * w - 1, "grid-mismatch",
            "pad record does not pair with this expand");

    Value proj = apply_linear(t, p.proj, x); // (h, w, 2c)
    const std::int64_t co = c / 2;
    static constexpr std::int64_t kDy[4] = {0, 0, 1, 1};
    static constexpr std::int64_t kDx[4] = {0, 1, 0, 1};
    // block index of (dy,dx) under the same ordering as patch_merge
    std::vector<std::int64_t> idx(static_cast<std::size_t>(th * tw * co));
    std::size_t o = 0;
    for (std::int64_t y = 0; y < th; ++y)
        for (std::int64_t xx = 0; xx < tw; ++xx) {
            const std::int64_t dy = y % 2, dx = xx % 2;
            std::int64_t b = 0;
            for (int k = 0; k < 4; ++k)
                if (kDy[k] == dy && kDx[k] == dx) b = k;
            for (std::int64_t cc = 0; cc < co; ++cc)
                idx[o++] = ((y / 2) * w + xx / 2) * (2 * c) + b * co + cc;
        }
    return gather(proj, make_index_map(std::move(idx)), Shape{th, tw, co});
}

// ---------------------------------------------------------------------------
// Absolute position embedding

ApeParams make_ape_params(ParamStore& store, const std::string& prefix, std::int64_t h, std::int64_t w,
                          std::int64_t c, Rng& rng) {
    ApeParams p;
    p.row = &store.create_trunc_normal(prefix + ".row", {h, c}, rng);
    p.col = &store.create_trunc_normal(prefix + ".col", {w, c}, rng);
    return p;
}

namespace {

// Broadcast a (n, C) table along the other spatial axis of an (h, w, C) grid,
// linearly interpolating when n differs from the axis length.
Value broadcast_axis_table(Tape& t, Parameter& table, std::int64_t h, std::int64_t w, bool along_rows) {
    const std::int64_t n = table.value.dim(0);
    const std::int64_t C = table.value.dim(1);
    const std::int64_t axis = along_rows ? h : w;
    Value leaf = t.leaf(table);

    auto build = [&](const std::vector<std::int64_t>& src_of_axis) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(h * w * C));
        std::size_t o = 0;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) {
                const std::int64_t s = src_of_axis[static_cast<std::size_t>(along_rows ? y : xx)];
                for (std::int64_t c = 0; c < C; ++c) idx[o++] = s * C + c;
            }
        return gather(leaf, make_index_map(std::move(idx)), Shape{h, w, C});
    };

    if (axis == n) {
        std::vector<std::int64_t> direct(static_cast<std::size_t>(axis));
        for (std::int64_t i = 0; i < axis; ++i) direct[static_cast<std::size_t>(i)] = i;
        return build(direct);
    }

    // half-pixel-centre linear interpolation between the two nearest entries
    std::vector<std::int64_t> lo(static_cast<std::size_t>(axis)), hi(static_cast<std::size_t>(axis));
    std::vector<double> frac(static_cast<std::size_t>(axis));
    for (std::int64_t i = 0; i < axis; ++i) {
        double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(n) / static_cast<double>(axis) - 0.5;
        pos = std::min(std::max(pos, 0.0), static_cast<double>(n - 1));
        const auto i0 = static_cast<std::int64_t>(std::floor(pos));
        lo[static_cast<std::size_t>(i)] = i0;
        hi[static_cast<std::size_t>(i)] = std::min(i0 + 1, n - 1);
        frac[static_cast<std::size_t>(i)] = pos - static_cast<double>(i0);
    }
    TensorF w0(Shape{h, w, C}), w1(Shape{h, w, C});
    std::size_t o = 0;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) {
            const double f = frac[static_cast<std::size_t>(along_rows ? y : xx)];
            for (std::int64_t c = 0; c < C; ++c, ++o) {
                w0[static_cast<std::int64_t>(o)] = 1.0 - f;
                w1[static_cast<std::int64_t>(o)] = f;
            }
        }
    Value g0 = build(lo), g1 = build(hi);
    return add(mul(g0, t.input(std::move(w0))), mul(g1, t.input(std::move(w1))));
}

} // namespace

Value add_ape(Tape& t, const ApeParams& p, Value x_hwc) {
    const TensorF& v = x_hwc.val();
    const std::int64_t h = v.dim(0), w = v.dim(1);
    Value rows = broadcast_axis_table(t, *p.row, h, w, true);
    Value cols = broadcast_axis_table(t, *p.col, h, w, false);
    return add(add(x_hwc, rows), cols);
}

// ---------------------------------------------------------------------------
// U-shaped assembly

UNetParams build_unet_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    UNetParams p;
    p.cfg = cfg;
    const std::int64_t C = cfg.embed_dim;
    const std::int64_t patch = 3 * cfg.stride * cfg.stride;
    p.embed = make_linear_params(store, "embed", patch, C, rng);
    p.embed_ln = make_ln_params(store, "embed.ln", C);

    const auto nominal = stage_shapes(cfg, cfg.input_h, cfg.input_w);
    if (cfg.use_ape)
        for (int i = 0; i < cfg.num_scales; ++i)
            p.ape.push_back(make_ape_params(store, "ape" + std::to_string(i),
                                            nominal[static_cast<std::size_t>(i)].h,
                                            nominal[static_cast<std::size_t>(i)].w, cfg.channels_at(i), rng));

    const int S = cfg.num_scales;
    auto make_stage = [&](const std::string& name, int scale) {
        p.rstb.push_back(make_rstb_params(store, name + ".rstb", cfg.channels_at(scale),
                                          cfg.heads_at(scale), cfg.window, cfg.swin_blocks_per_rstb,
                                          cfg.use_rpe, cfg.mlp_ratio, cfg.rstb_conv_kernel, rng));
        p.cross.push_back(make_cross_params(store, name + ".cross", cfg.channels_at(scale),
                                            cfg.heads_at(scale), nominal[static_cast<std::size_t>(scale)].w,
                                            cfg.use_rpe, rng));
    };

    for (int i = 0; i + 1 < S; ++i) {
        make_stage("down" + std::to_string(i), i);
        p.merge.push_back(make_patch_merge_params(store, "down" + std::to_string(i) + ".merge",
                                                  cfg.channels_at(i), rng));
    }
    if (S >= 1) make_stage("bottleneck", S - 1);
    for (int i = S - 2; i >= 0; --i) {
        p.expand.push_back(make_patch_expand_params(store, "up" + std::to_string(i) + ".expand",
                                                    cfg.channels_at(i + 1), rng));
        make_stage("up" + std::to_string(i), i);
    }
    if (S >= 1) make_stage("final", 0);
    return p;
}

namespace {

Value embed_tokens(Tape& t, const UNetParams& p, Value img, std::int64_t h0, std::int64_t w0) {
    const TensorF& v = img.val();
    const std::int64_t H = v.dim(0), W = v.dim(1);
    const int s = p.cfg.stride;
    // standardize [0,1] -> [-1,1]
    Value x = add_const(scale(img, 2.0), -1.0);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(h0 * w0 * s * s * 3));
    std::size_t o = 0;
    for (std::int64_t ty = 0; ty < h0; ++ty)
        for (std::int64_t tx = 0; tx < w0; ++tx)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx) {
                    const std::int64_t iy = ty * s + dy, ix = tx * s + dx;
                    for (int c = 0; c < 3; ++c)
                        idx[o++] = (iy < H && ix < W) ? (iy * W + ix) * 3 + c : -1;
                }
    Value patches = gather(x, make_index_map(std::move(idx)), Shape{h0, w0, 3 * s * s});
    return apply_ln(t, p.embed_ln, apply_linear(t, p.embed, patches));
}

void check_stage_shape(const Value& v, const StageShape& want, int scale) {
    const TensorF& x = v.val();
    require(x.dim(0) == want.h && x.dim(1) == want.w && x.dim(2) == want.c, "shape-mismatch",
            "stage " + std::to_string(scale) + " produced " + shape_str(x.shape) + ", scale law wants (" +
                std::to_string(want.h) + "," + std::to_string(want.w) + "," + std::to_string(want.c) + ")");
}

} // namespace

UNetOutput unet_forward(Tape& t, const UNetParams& p, Value left_img, Value right_img) {
    const ModelConfig& cfg = p.cfg;
    cfg.validate();
    require(cfg.num_scales >= 1, "bad-config", "unet_forward needs at least one scale");
    const TensorF& lv = left_img.val();
    const TensorF& rv = right_img.val();
    require(lv.rank() == 3 && lv.dim(2) == 3, "shape-mismatch", "images must be (H,W,3)");
    require(same_shape(lv.shape, rv.shape), "pair-mismatch",
            "left " + shape_str(lv.shape) + " vs right " + shape_str(rv.shape));

    const auto shapes = stage_shapes(cfg, lv.dim(0), lv.dim(1));
    require(shapes.back().h >= cfg.window && shapes.back().w >= cfg.window, "too-small-input",
            "deepest token grid " + std::to_string(shapes.back().h) + "x" +
                std::to_string(shapes.back().w) + " is smaller than the window " +
                std::to_string(cfg.window));

    const int S = cfg.num_scales;
    Value L = embed_tokens(t, p, left_img, shapes[0].h, shapes[0].w);
    Value R = embed_tokens(t, p, right_img, shapes[0].h, shapes[0].w);
    if (cfg.use_ape) {
        L = add_ape(t, p.ape[0], L);
        R = add_ape(t, p.ape[0], R);
    }

    UNetOutput out;
    std::vector<PadRecord> recs(static_cast<std::size_t>(std::max(0, S - 1)));
    std::vector<Value> skip_l(static_cast<std::size_t>(std::max(0, S - 1)));
    std::vector<Value> skip_r(static_cast<std::size_t>(std::max(0, S - 1)));
    std::vector<int> skip_state(static_cast<std::size_t>(std::max(0, S - 1)), 0); // 0 none, 1 stored, 2 used

    std::size_t stage = 0;
    auto run_stage = [&](int scale) -> CrossOut {
        check_stage_shape(L, shapes[static_cast<std::size_t>(scale)], scale);
        check_stage_shape(R, shapes[static_cast<std::size_t>(scale)], scale);
        L = rstb_forward(t, p.rstb[stage], L);
        R = rstb_forward(t, p.rstb[stage], R);
        CrossOut c = cross_attention_layer(t, p.cross[stage], R, L);
        R = c.right;
        L = c.left;
        const std::int64_t rows = shapes[static_cast<std::size_t>(scale)].h;
        out.cross_maps.push_back(CrossMaps{head_mean_maps(c.a1.probs, rows, p.cross[stage].heads),
                                           head_mean_maps(c.a2.probs, rows, p.cross[stage].heads), scale});
        ++stage;
        return c;
    };

    // down path
    for (int i = 0; i + 1 < S; ++i) {
        run_stage(i);
        if (i < cfg.skip_count) {
            skip_l[static_cast<std::size_t>(i)] = L;
            skip_r[static_cast<std::size_t>(i)] = R;
            skip_state[static_cast<std::size_t>(i)] = 1;
        }
        L = patch_merge(t, p.merge[static_cast<std::size_t>(i)], L, &recs[static_cast<std::size_t>(i)]);
        R = patch_merge(t, p.merge[static_cast<std::size_t>(i)], R, nullptr);
        if (cfg.use_ape) {
            L = add_ape(t, p.ape[static_cast<std::size_t>(i + 1)], L);
            R = add_ape(t, p.ape[static_cast<std::size_t>(i + 1)], R);
        }
    }

    // bottleneck
    run_stage(S - 1);

    // up path
    for (int i = S - 2; i >= 0; --i) {
        const std::size_t ei = static_cast<std::size_t>(S - 2 - i);
        L = patch_expand(t, p.expand[ei], L, true, &recs[static_cast<std::size_t>(i)]);
        R = patch_expand(t, p.expand[ei], R, true, &recs[static_cast<std::size_t>(i)]);
        const bool has_skip = skip_state[static_cast<std::size_t>(i)] == 1;
        if (has_skip && cfg.skip_placement == ModelConfig::SkipPlacement::BeforeCross) {
            L = add(L, skip_l[static_cast<std::size_t>(i)]);
            R = add(R, skip_r[static_cast<std::size_t>(i)]);
            skip_state[static_cast<std::size_t>(i)] = 2;
        }
        run_stage(i);
        if (has_skip && cfg.skip_placement == ModelConfig::SkipPlacement::AfterCross) {
            L = add(L, skip_l[static_cast<std::size_t>(i)]);
            R = add(R, skip_r[static_cast<std::size_t>(i)]);
            skip_state[static_cast<std::size_t>(i)] = 2;
        }
    }

    // final matching stage at scale 0
    CrossOut fin = run_stage(0);
    for (std::size_t i = 0; i < skip_state.size(); ++i)
        require(skip_state[i] != 1, "skip-unconsumed",
                "skip at scale " + std::to_string(i) + " was stored but never used");

    out.left_tokens = L;
    out.right_tokens = R;
    out.match_scores = head_mean_maps(fin.a2.scores, shapes[0].h, p.cross[stage - 1].heads);
    return out;
}

} // namespace aau
