#pragma once

#include "aau/attention.hpp"

namespace aau {

// Optimal-transport assignment for one epipolar row: (w+1)x(w+1) with the last
// row/column acting as dustbins for unmatchable pixels. Marginals are
// [1,...,1,w] on both sides, so every real pixel carries total mass 1 and the
// dustbin absorbs the remainder.
struct AssignmentMatrix {
    TensorF t; // (w+1, w+1)

    std::int64_t width() const { return t.dim(0) - 1; }
    double row_marginal_dev() const;
    double col_marginal_dev() const;
};

// Log-domain Sinkhorn over batched rows. scores (rows, w, w) are affinities
// (higher = better match); the learnable dustbin score fills the appended row
// and column. Fully differentiable through the unrolled iterations.
Value sinkhorn_batched(Tape& t, Value scores, Value dustbin, int iters, double temperature);

// Single-matrix convenience wrapper (values only).
AssignmentMatrix sinkhorn_ot(const TensorF& scores, double dustbin_score, int iters,
                             double temperature);

// ---------------------------------------------------------------------------
// Raw disparity / occlusion regression from the assignment matrices.
struct RawRegression {
    Value d_raw;       // (rows, w): i - windowed sub-pixel match position, pre-clamp
    Value confidence;  // (rows, w): assignment mass inside the interpolation window
    Value t_phi;       // (rows, w): dustbin mass per left pixel
    TensorF occ_flags; // (rows, w) 1 = flagged occluded (dustbin dominant or low confidence)
    TensorF d_raw_out; // (rows, w) values: occluded zeroed, negatives clamped to 0
};

RawRegression raw_regression(Tape& t, Value assignment, int interp_window, double occ_threshold);

// ---------------------------------------------------------------------------
// Context adjustment: bilinear upsampling of the raw maps guided by the left
// image through a small residual conv stack; occlusion head squashes to (0,1).
struct ContextAdjustParams {
    Parameter *in_w = nullptr, *in_b = nullptr;
    struct Block {
        Parameter *w1 = nullptr, *b1 = nullptr;
        Parameter *w2 = nullptr, *b2 = nullptr;
    };
    std::vector<Block> blocks;
    Parameter *disp_w = nullptr, *disp_b = nullptr; // zero-initialized head
    Parameter *occ_w = nullptr, *occ_b = nullptr;
    int channels = 16;
    bool use_occ_input = true;
};

ContextAdjustParams make_context_adjust_params(ParamStore& store, int channels, int blocks,
                                               bool use_occ_input, Rng& rng);

struct ContextOut {
    Value d_final;   // (H, W)
    Value occ_final; // (H, W) in (0,1)
    Value d_base;    // (H, W) bilinear-upsampled s * d_raw (pre-residual)
};

ContextOut context_adjust(Tape& t, const ContextAdjustParams& p, Value d_raw,
                          const TensorF& occ_soft, Value left_img, int stride);

// Bilinear upsample of a (rows, w) token-grid map to (H, W) raw resolution
// (half-pixel centres, stride s).
Value bilinear_upsample_tokens(Value x, std::int64_t H, std::int64_t W, int stride);

} // namespace aau
