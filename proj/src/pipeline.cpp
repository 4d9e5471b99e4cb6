#include "aau/pipeline.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace aau {

namespace {

struct AllParams {
    UNetParams unet;
    Parameter* dustbin;
    ContextAdjustParams ctx;
};

AllParams build_all_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    AllParams p;
    p.unet = build_unet_params(store, cfg, rng);
    p.dustbin = &store.create_zeros("dustbin", Shape{});
    p.ctx = make_context_adjust_params(store, cfg.ctx_channels, cfg.ctx_blocks, cfg.ctx_use_occ_input, rng);
    return p;
}

} // namespace

StereoModel::StereoModel(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    Rng rng(seed);
    AllParams p = build_all_params(store, cfg, rng);
    unet = std::move(p.unet);
    dustbin = p.dustbin;
    ctx = p.ctx;
}

StereoModel::Forward StereoModel::forward(Tape& t, const TensorF& left, const TensorF& right) {
    Forward f;
    f.left_img = t.input(left);
    f.right_img = t.input(right);
    f.net = unet_forward(t, unet, f.left_img, f.right_img);
    f.assignment = sinkhorn_batched(t, f.net.match_scores, t.leaf(*dustbin), cfg.sinkhorn_iters,
                                    cfg.sinkhorn_temperature);
    f.raw = raw_regression(t, f.assignment, cfg.max_interp_window, cfg.occlusion_threshold);
    f.context = context_adjust(t, ctx, f.raw.d_raw, f.raw.occ_flags, f.left_img, cfg.stride);
    return f;
}

std::int64_t count_params(const ModelConfig& cfg) {
    ParamStore store;
    Rng rng(0);
    build_all_params(store, cfg, rng);
    return store.trainable_scalars();
}

DisparityResult infer(StereoModel& model, const TensorF& left, const TensorF& right,
                      bool dump_attention) {
    Tape t;
    StereoModel::Forward f = model.forward(t, left, right);

    DisparityResult r;
    r.d_raw = f.raw.d_raw_out;
    r.occ_raw = f.raw.occ_flags;
    r.confidence = t.val(f.raw.confidence);
    r.d_final = t.val(f.context.d_final);
    for (auto& v : r.d_final.data) v = std::max(0.0, v);
    r.occ_final = t.val(f.context.occ_final);
    if (dump_attention)
        for (const auto& m : f.net.cross_maps) r.attention_maps.push_back(t.val(m.left_probs));
    return r;
}

TrainTargets make_targets(const StereoSample& sample, const ModelConfig& cfg) {
    require(sample.has_gt(), "io-error", "training sample has no ground-truth disparity");
    const std::int64_t H = sample.left.dim(0), W = sample.left.dim(1);
    const int s = cfg.stride;
    const std::int64_t rows = (H + s - 1) / s, w = (W + s - 1) / s;

    TrainTargets tg;
    tg.gt_cols = TensorF::full({rows, w}, -1.0);
    tg.occ_tok = TensorF(Shape{rows, w});
    tg.d_gt_tok = TensorF(Shape{rows, w});
    tg.valid_tok = TensorF(Shape{rows, w});
    tg.d_gt_full = sample.d_gt;
    tg.occ_full = sample.occ_gt.numel() ? sample.occ_gt : TensorF(Shape{H, W});
    tg.noc_full = TensorF(Shape{H, W});
    for (std::int64_t i = 0; i < H * W; ++i) tg.noc_full[i] = tg.occ_full[i] > 0.5 ? 0.0 : 1.0;

    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t cy = std::min<std::int64_t>(r * s + s / 2, H - 1);
        for (std::int64_t i = 0; i < w; ++i) {
            const std::int64_t cx = std::min<std::int64_t>(i * s + s / 2, W - 1);
            const bool occ = tg.occ_full.at(cy, cx) > 0.5;
            const double d_tok = sample.d_gt.at(cy, cx) / static_cast<double>(s);
            tg.d_gt_tok.at(r, i) = d_tok;
            const double col = static_cast<double>(i) - d_tok;
            if (occ || col < 0.0 || col > static_cast<double>(w - 1)) {
                tg.occ_tok.at(r, i) = 1.0;
            } else {
                tg.gt_cols.at(r, i) = col;
                tg.valid_tok.at(r, i) = 1.0;
            }
        }
    }
    return tg;
}

Value build_loss(StereoModel& model, Tape& t, const StereoSample& sample,
                 const TrainTargets& targets, const LossWeights& weights, StepLosses* out) {
    StereoModel::Forward f = model.forward(t, sample.left, sample.right);
    int warn = 0;
    Value l_rr = loss_rr(t, f.assignment, targets.gt_cols, targets.occ_tok, &warn);
    Value l_d1r = loss_smooth_l1(t, f.raw.d_raw, targets.d_gt_tok, targets.valid_tok);
    Value l_d1f = loss_smooth_l1(t, f.context.d_final, targets.d_gt_full, targets.noc_full);
    Value l_be = loss_be(t, f.context.occ_final, targets.occ_full);
    Value total = loss_total(l_rr, l_d1r, l_d1f, l_be, weights);
    if (out) {
        out->rr = t.val(l_rr)[0];
        out->d1r = t.val(l_d1r)[0];
        out->d1f = t.val(l_d1f)[0];
        out->be = t.val(l_be)[0];
        out->total = t.val(total)[0];
        out->clamp_warnings = warn;
    }
    return total;
}

StepLosses train_step(StereoModel& model, AdamW& opt, const StereoSample& sample,
                      const TrainTargets& targets, const LossWeights& weights) {
    StepLosses losses;
    Tape t;
    Value total = build_loss(model, t, sample, targets, weights, &losses);
    opt.zero_grad();
    t.backward(total);
    opt.step();
    return losses;
}

// ---------------------------------------------------------------------------
// Weights serialization

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& b;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        require(pos + n <= b.size(), "truncated", "weights file ends mid-record");
    }
    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>((static_cast<unsigned char>(b[pos])) |
                                                  (static_cast<unsigned char>(b[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(b[pos++]);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = b.substr(pos, n);
        pos += n;
        return s;
    }
    float f32() {
        need(4);
        unsigned char raw[4];
        std::memcpy(raw, b.data() + pos, 4);
        pos += 4;
        float f;
        std::memcpy(&f, raw, 4);
        return f;
    }
};

} // namespace

void save_weights(const std::string& path, const ParamStore& store) {
    std::string out = "AAUW";
    put_u32(out, 1u);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Parameter& p = store[i];
        require(p.name.size() <= 0xffff, "bad-config", "parameter name too long: " + p.name);
        put_u16(out, static_cast<std::uint16_t>(p.name.size()));
        out += p.name;
        out.push_back(static_cast<char>(p.value.rank()));
        for (auto d : p.value.shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (std::int64_t j = 0; j < p.value.numel(); ++j) {
            const float f = static_cast<float>(p.value[j]);
            char raw[4];
            std::memcpy(raw, &f, 4);
            out.append(raw, 4);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "io-error", "cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(f.good(), "io-error", "short write to " + path);
}

void load_weights(const std::string& path, ParamStore& store) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "io-error", "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{bytes};
    require(r.str(4) == "AAUW", "bad-magic", path + " is not a weights file");
    require(r.u32() == 1u, "bad-header", "unsupported weights version");

    std::size_t loaded = 0;
    while (r.pos < bytes.size()) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        const std::uint8_t rank = r.u8();
        Shape shape;
        for (int i = 0; i < rank; ++i) shape.push_back(static_cast<std::int64_t>(r.u32()));
        require(store.has(name), "weights-mismatch", "file has unknown parameter '" + name + "'");
        Parameter& p = store.get(name);
        require(same_shape(p.value.shape, shape), "weights-mismatch",
                "parameter '" + name + "' has shape " + shape_str(p.value.shape) + " but file stores " +
                    shape_str(shape));
        for (std::int64_t j = 0; j < p.value.numel(); ++j) p.value[j] = static_cast<double>(r.f32());
        ++loaded;
    }
    require(loaded == store.size(), "weights-mismatch",
            "file stores " + std::to_string(loaded) + " parameters, model has " +
                std::to_string(store.size()));
}

} // namespace aau
