#pragma once

#include <string>
#include <vector>

#include "aau/cross.hpp"

namespace aau {

// All architecture hyperparameters. The nominal input size pins the shapes of
// position tables so the parameter set (and its count) depends only on the
// config; forward passes on other sizes interpolate the absolute embeddings
// and reuse the relative tables as long as the rows are no wider.
struct ModelConfig {
    std::int64_t embed_dim = 48;      // C
    std::int64_t window = 7;          // M
    int stride = 3;                   // s, input downsampling of the token embedding
    int swin_blocks_per_rstb = 2;     // WSA/S-WSA alternate, so must be even
    int num_scales = 4;               // scales 0..num_scales-1; 2*num_scales cross layers
    std::vector<int> heads_per_scale; // empty -> max(1, C/16) doubling per scale
    int skip_count = 3;               // <= num_scales-1
    enum class SkipPlacement { BeforeCross, AfterCross };
    SkipPlacement skip_placement = SkipPlacement::BeforeCross;
    int max_interp_window = 3;        // sub-pixel interpolation window (odd)
    bool use_ape = true;
    bool use_rpe = true;
    std::int64_t input_h = 540, input_w = 960; // nominal size for position tables
    int rstb_conv_kernel = 3;
    int mlp_ratio = 4;
    int sinkhorn_iters = 10;
    double sinkhorn_temperature = 1.0;
    double occlusion_threshold = 0.3;
    int ctx_channels = 16;
    int ctx_blocks = 2;
    bool ctx_use_occ_input = true;

    std::int64_t channels_at(int scale) const { return embed_dim << scale; }
    int heads_at(int scale) const;
    void validate() const;

    // base | middle | large (Scene Flow scale) and toy (desk scale)
    static ModelConfig preset(const std::string& name);
};

struct StageShape {
    std::int64_t h, w, c;
};

// Token grid per scale for an (H, W) input: ceil(H/s) at scale 0, then
// ceil-halving; channels double per scale.
std::vector<StageShape> stage_shapes(const ModelConfig& cfg, std::int64_t H, std::int64_t W);

// ---------------------------------------------------------------------------
// Blocks

struct SwinBlockParams {
    LnParams ln1, ln2;
    MhaParams attn;
    RelativeBiasTable bias;
    bool use_bias = true;
    LinearParams fc1, fc2;
    std::int64_t window = 7;
    std::int64_t shift = 0;
};

SwinBlockParams make_swin_block_params(ParamStore& store, const std::string& prefix, std::int64_t C,
                                       int heads, std::int64_t M, std::int64_t shift, bool use_bias,
                                       int mlp_ratio, Rng& rng);

Value swin_block_forward(Tape& t, const SwinBlockParams& p, Value x_hwc);

struct RstbParams {
    std::vector<SwinBlockParams> blocks;
    Parameter* conv_w = nullptr; // (C, C, k, k)
    Parameter* conv_b = nullptr;
    int conv_kernel = 3;
};

RstbParams make_rstb_params(ParamStore& store, const std::string& prefix, std::int64_t C, int heads,
                            std::int64_t M, int depth, bool use_bias, int mlp_ratio, int conv_kernel,
                            Rng& rng);

// x + conv(chain of WSA / S-WSA swin blocks); shape preserving.
Value rstb_forward(Tape& t, const RstbParams& p, Value x_hwc);

// ---------------------------------------------------------------------------
// Patch merging / expanding

struct PadRecord {
    std::int64_t in_h = 0, in_w = 0; // dims before the merge padded them
};

struct PatchMergeParams {
    LinearParams proj; // 4c -> 2c
};
struct PatchExpandParams {
    LinearParams proj; // c -> 2c
};

PatchMergeParams make_patch_merge_params(ParamStore& store, const std::string& prefix, std::int64_t c,
                                         Rng& rng);
PatchExpandParams make_patch_expand_params(ParamStore& store, const std::string& prefix, std::int64_t c,
                                           Rng& rng);

// (h,w,c) -> (ceil(h/2), ceil(w/2), 2c); 2x2 neighbourhood concat order is
// (0,0),(0,1),(1,0),(1,1). Records pre-pad dims in *rec.
Value patch_merge(Tape& t, const PatchMergeParams& p, Value x, PadRecord* rec);

// (h,w,c) -> (2h or stripped, ..., c/2); strip_pads requires the paired merge
// record ("pad-record-missing" otherwise).
Value patch_expand(Tape& t, const PatchExpandParams& p, Value x, bool strip_pads,
                   const PadRecord* rec);

// ---------------------------------------------------------------------------
// Absolute position embedding, factorized into learnable row + column vectors
// at the nominal grid; the materialized embedding matches the token grid and
// is linearly interpolated when the actual grid differs.
struct ApeParams {
    Parameter* row = nullptr; // (H_i, C_i)
    Parameter* col = nullptr; // (W_i, C_i)
};

ApeParams make_ape_params(ParamStore& store, const std::string& prefix, std::int64_t h, std::int64_t w,
                          std::int64_t c, Rng& rng);

Value add_ape(Tape& t, const ApeParams& p, Value x_hwc);

// ---------------------------------------------------------------------------
// U-shaped assembly

struct UNetParams {
    ModelConfig cfg;
    LinearParams embed; // (3*s*s -> C)
    LnParams embed_ln;
    std::vector<ApeParams> ape;        // per scale when use_ape
    std::vector<RstbParams> rstb;      // 2*num_scales in pipeline order
    std::vector<CrossParams> cross;    // 2*num_scales in pipeline order
    std::vector<PatchMergeParams> merge;   // num_scales-1
    std::vector<PatchExpandParams> expand; // num_scales-1
};

// Registers every backbone parameter for cfg into store (deterministic order
// and init from rng).
UNetParams build_unet_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

struct CrossMaps {
    Value right_probs; // (rows, w, w) head-averaged, right queries over left keys
    Value left_probs;  // (rows, w, w) head-averaged, left queries over right keys
    int scale = 0;
};

struct UNetOutput {
    Value left_tokens, right_tokens; // (h0, w0, C)
    std::vector<CrossMaps> cross_maps;
    Value match_scores;              // (rows, w, w) head-averaged final-layer left scores
};

// Full pipeline: standardized stride-s patch embedding (+APE) ->
// [RSTB -> cross -> merge] down path -> RSTB+cross bottleneck ->
// [expand -> (+skip) -> RSTB -> cross] up path -> final RSTB+cross matching
// stage at scale 0.
UNetOutput unet_forward(Tape& t, const UNetParams& p, Value left_img, Value right_img);

// Trainable scalar count of the full model (backbone + matching head) for the
// configuration.
std::int64_t count_params(const ModelConfig& cfg);

} // namespace aau
