#pragma once

#include <array>
#include <string>

#include "aau/rng.hpp"
#include "aau/tensor.hpp"

namespace aau {

// Rectified pair plus optional ground truth. Images are (H,W,3) in [0,1];
// d_gt is (H,W) raw-pixel disparity; occ_gt is (H,W) with 1 = occluded.
struct StereoSample {
    TensorF left, right;
    TensorF d_gt;
    TensorF occ_gt;
    std::string name;

    bool has_gt() const { return d_gt.numel() > 0; }
};

// Random-dot stereogram: noise background at disparity d_background with one
// foreground rectangle [x0,x1) x [y0,y1) at d_foreground >= d_background.
// Integer disparities keep the ground truth exact.
struct RdsSpec {
    std::int64_t h = 48, w = 96;
    std::int64_t d_background = 2;
    std::int64_t x0 = 40, y0 = 12, x1 = 72, y1 = 36;
    std::int64_t d_foreground = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

StereoSample synth_rds(const RdsSpec& spec);

// ---------------------------------------------------------------------------
// PFM ("Pf" single channel / "PF" three channel), rows stored bottom-to-top,
// negative scale = little-endian. Payload is 32-bit floats.
void pfm_write(const std::string& path, const TensorF& data); // (H,W) or (H,W,3)
TensorF pfm_read(const std::string& path);

// Binary PPM (P6) / PGM (P5) with maxval 255; values map to [0,1].
void ppm_write(const std::string& path, const TensorF& image); // (H,W,3)
TensorF ppm_read(const std::string& path);                     // P5 replicated to 3 channels
void pgm_write(const std::string& path, const TensorF& gray);  // (H,W)
TensorF pgm_read(const std::string& path);                     // (H,W)

// In-memory parsers backing the readers; exposed for fuzzing.
TensorF pfm_parse(const std::string& bytes);
TensorF pnm_parse(const std::string& bytes); // P5 -> (H,W), P6 -> (H,W,3)

// ---------------------------------------------------------------------------
// Inverse-mapped bilinear affine warp; matrix is row-major 2x3 mapping input
// to output coordinates: (x', y') = (m0 x + m1 y + m2, m3 x + m4 y + m5).
// Out-of-bounds samples are zero.
TensorF apply_affine(const TensorF& image, const std::array<double, 6>& m);

// Dataset directory layout: left.ppm, right.ppm, disp.pfm, occ.pgm.
void save_sample(const std::string& dir, const StereoSample& s);
StereoSample load_sample(const std::string& dir);

} // namespace aau
