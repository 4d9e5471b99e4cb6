#pragma once

#include "aau/tape.hpp"

namespace aau {

// Bookkeeping for padding an (h, w) token grid to multiples of the window
// size M and tiling it into non-overlapping M x M windows, row-major.
struct WindowGrid {
    std::int64_t window = 0; // M
    std::int64_t h = 0, w = 0;
    std::int64_t padded_h = 0, padded_w = 0;
    std::int64_t pad_bottom = 0, pad_right = 0;

    std::int64_t wins_y() const { return padded_h / window; }
    std::int64_t wins_x() const { return padded_w / window; }
    std::int64_t num_windows() const { return wins_y() * wins_x(); }
};

WindowGrid make_window_grid(std::int64_t h, std::int64_t w, std::int64_t M);

// Partition (h,w,C) into (num_windows, M*M, C); pads are zero-filled. An
// optional cyclic shift by (shift, shift) on the padded grid is fused into the
// index map (shift happens before partitioning).
Value window_partition(Value x_hwc, const WindowGrid& grid, std::int64_t shift = 0);

// Inverse of window_partition for the same grid/shift: strips pads exactly.
Value window_reverse(Value windows, const WindowGrid& grid, std::int64_t shift = 0);

// out(i,j) = in((i+dy) mod h, (j+dx) mod w)
Value cyclic_shift(Value x_hwc, std::int64_t dy, std::int64_t dx);

// Padded-grid coordinates of window slot (win, local) after unshifting, or
// (-1,-1) when the slot maps to padding. Used for masks and tests.
struct SlotOrigin {
    std::int64_t y = -1, x = -1;
    bool real = false;
};
std::vector<SlotOrigin> window_slot_origins(const WindowGrid& grid, std::int64_t shift);

// Additive attention mask (num_windows, M*M, M*M): 0 where attention is
// allowed, -1e30 where it is not. Encodes the shifted-window region rule
// (tokens wrapped across the original boundary must not attend each other)
// plus exclusion of padded keys. Returns an empty tensor when no mask is
// needed (no shift, no padding).
TensorF shifted_window_mask(const WindowGrid& grid, std::int64_t shift);

constexpr double kMaskNegInf = -1e30;

} // namespace aau
