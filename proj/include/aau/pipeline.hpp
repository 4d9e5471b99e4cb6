#pragma once

#include <optional>

#include "aau/backbone.hpp"
#include "aau/losses.hpp"
#include "aau/matching.hpp"
#include "aau/optim.hpp"
#include "aau/stereo_io.hpp"

namespace aau {

// Full model: shared-weight U-shaped backbone, learnable dustbin score and
// context adjustment head. Parameter registration order is fixed by the
// config, so serialization is deterministic.
struct StereoModel {
    ModelConfig cfg;
    ParamStore store;
    UNetParams unet;
    Parameter* dustbin = nullptr;
    ContextAdjustParams ctx;

    StereoModel(const ModelConfig& cfg, std::uint64_t seed);

    struct Forward {
        UNetOutput net;
        Value assignment; // (rows, w+1, w+1)
        RawRegression raw;
        ContextOut context;
        Value left_img, right_img;
    };

    Forward forward(Tape& t, const TensorF& left, const TensorF& right);
};

// Final maps produced by inference. d maps are clamped to >= 0; occluded raw
// pixels carry disparity 0.
struct DisparityResult {
    TensorF d_raw;      // (rows, w), token-grid units
    TensorF occ_raw;    // (rows, w) 0/1 flags at the confidence threshold
    TensorF confidence; // (rows, w)
    TensorF d_final;    // (H, W), raw-pixel units
    TensorF occ_final;  // (H, W) in (0,1)

    std::vector<TensorF> attention_maps; // optional per-layer left-stream maps
};

DisparityResult infer(StereoModel& model, const TensorF& left, const TensorF& right,
                      bool dump_attention = false);

// Ground truth resampled onto the token grid (centre sampling, disparities in
// token units) plus the full-resolution maps the final losses use.
struct TrainTargets {
    TensorF gt_cols;   // (rows, w): target right column, fractional; <0 = unsupervised
    TensorF occ_tok;   // (rows, w) 1 = occluded (dustbin supervision)
    TensorF d_gt_tok;  // (rows, w) disparity / stride
    TensorF valid_tok; // (rows, w) 1 where raw smooth-L1 applies
    TensorF d_gt_full; // (H, W)
    TensorF occ_full;  // (H, W)
    TensorF noc_full;  // (H, W) = 1 - occ
};

TrainTargets make_targets(const StereoSample& sample, const ModelConfig& cfg);

struct StepLosses {
    double rr = 0, d1r = 0, d1f = 0, be = 0, total = 0;
    int clamp_warnings = 0;
};

StepLosses train_step(StereoModel& model, AdamW& opt, const StereoSample& sample,
                      const TrainTargets& targets, const LossWeights& weights);

// Loss graph without the optimizer step; used by gradient checks.
Value build_loss(StereoModel& model, Tape& t, const StereoSample& sample,
                 const TrainTargets& targets, const LossWeights& weights, StepLosses* out = nullptr);

// ---------------------------------------------------------------------------
// Weights file: magic "AAUW", version u32; per parameter: name length u16,
// name bytes, rank u8, dims u32 each, then 32-bit little-endian floats.
void save_weights(const std::string& path, const ParamStore& store);
void load_weights(const std::string& path, ParamStore& store);

} // namespace aau
