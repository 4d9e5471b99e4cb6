#pragma once

#include "aau/tape.hpp"

namespace aau {

struct LossWeights {
    double w_rr = 1.0;
    double w_d1r = 1.0;
    double w_d1f = 1.0;
    double w_be = 1.0;
};

// Relative response loss over batched assignment matrices T (rows, w+1, w+1).
// gt_cols (rows, w): ground-truth match column per left pixel, fractional
// allowed (mass interpolated between the two flanking columns); entries < 0
// are excluded from the matched set. occ (rows, w): 1 marks the occluded set,
// supervised through the dustbin column. Supervised probabilities are clamped
// at 1e-12; each clamp increments *clamp_warnings when given.
Value loss_rr(Tape& t, Value assignment, const TensorF& gt_cols, const TensorF& occ,
              int* clamp_warnings = nullptr);

// Mean smooth-L1 between prediction and ground truth over mask==1 pixels.
Value loss_smooth_l1(Tape& t, Value pred, const TensorF& gt, const TensorF& mask);

// Mean binary cross-entropy of predicted occlusion probabilities against
// labels y in {0,1}; probabilities clamped away from {0,1}.
Value loss_be(Tape& t, Value prob, const TensorF& y);

// w1*L_rr + w2*L_d1r + w3*L_d1f + w4*L_be; rejects non-finite components by name.
Value loss_total(Value l_rr, Value l_d1r, Value l_d1f, Value l_be, const LossWeights& w);

// Value-level convenience wrappers used by tests and the CLI.
double loss_rr_value(const TensorF& assignment, const TensorF& gt_cols, const TensorF& occ,
                     int* clamp_warnings = nullptr);
double loss_smooth_l1_value(const TensorF& pred, const TensorF& gt, const TensorF& mask);
double loss_be_value(const TensorF& prob, const TensorF& y);

struct Metrics {
    double epe = 0.0;
    double err3px_percent = 0.0;
    std::int64_t n_pixels = 0;   // evaluated (non-occluded) pixels
    std::int64_t n_occluded = 0; // pixels excluded by the mask
};

// EPE and strict >3px error rate over noc_mask==1 pixels.
Metrics metrics_epe_3px(const TensorF& d_pred, const TensorF& d_gt, const TensorF& noc_mask);

} // namespace aau
