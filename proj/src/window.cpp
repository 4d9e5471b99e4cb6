#include "aau/window.hpp"

namespace aau {

namespace {

std::int64_t pos_mod(std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; }

// Shifted-window region id along one axis of the padded grid. The three bands
// are the standard swin slices computed on post-shift coordinates; tokens in
// different bands were not neighbours before the shift.
std::int64_t band(std::int64_t p, std::int64_t padded, std::int64_t M, std::int64_t shift) {
    if (shift == 0) return 0;
    if (p < padded - M) return 0;
    if (p < padded - shift) return 1;
    return 2;
}

} // namespace

WindowGrid make_window_grid(std::int64_t h, std::int64_t w, std::int64_t M) {
    require(M > 0, "bad-window", "window size must be positive, got " + std::to_string(M));
    require(h > 0 && w > 0, "bad-window", "grid dims must be positive");
    WindowGrid g;
    g.window = M;
    g.h = h;
    g.w = w;
    g.padded_h = (h + M - 1) / M * M;
    g.padded_w = (w + M - 1) / M * M;
    g.pad_bottom = g.padded_h - h;
    g.pad_right = g.padded_w - w;
    return g;
}

std::vector<SlotOrigin> window_slot_origins(const WindowGrid& grid, std::int64_t shift) {
    const std::int64_t M = grid.window;
    std::vector<SlotOrigin> origins(static_cast<std::size_t>(grid.num_windows() * M * M));
    for (std::int64_t wy = 0; wy < grid.wins_y(); ++wy) {
        for (std::int64_t wx = 0; wx < grid.wins_x(); ++wx) {
            const std::int64_t win = wy * grid.wins_x() + wx;
            for (std::int64_t ly = 0; ly < M; ++ly) {
                for (std::int64_t lx = 0; lx < M; ++lx) {
                    const std::int64_t py = wy * M + ly; // shifted padded coords
                    const std::int64_t px = wx * M + lx;
                    const std::int64_t sy = pos_mod(py + shift, grid.padded_h); // unshifted
                    const std::int64_t sx = pos_mod(px + shift, grid.padded_w);
                    SlotOrigin& o = origins[static_cast<std::size_t>(win * M * M + ly * M + lx)];
                    if (sy < grid.h && sx < grid.w) {
                        o.y = sy;
                        o.x = sx;
                        o.real = true;
                    }
                }
            }
        }
    }
    return origins;
}

Value window_partition(Value x_hwc, const WindowGrid& grid, std::int64_t shift) {
    const TensorF& xv = x_hwc.val();
    require(xv.rank() == 3, "shape-mismatch", "window_partition input must be (h,w,C)");
    require(xv.dim(0) == grid.h && xv.dim(1) == grid.w, "grid-mismatch",
            "window_partition input " + shape_str(xv.shape) + " does not match grid");
    const std::int64_t C = xv.dim(2);
    const std::int64_t M = grid.window;
    const auto origins = window_slot_origins(grid, shift);

    std::vector<std::int64_t> idx(static_cast<std::size_t>(grid.num_windows() * M * M * C));
    for (std::size_t s = 0; s < origins.size(); ++s) {
        const SlotOrigin& o = origins[s];
        for (std::int64_t c = 0; c < C; ++c)
            idx[s * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)] =
                o.real ? (o.y * grid.w + o.x) * C + c : -1;
    }
    return gather(x_hwc, make_index_map(std::move(idx)), Shape{grid.num_windows(), M * M, C});
}

Value window_reverse(Value windows, const WindowGrid& grid, std::int64_t shift) {
    const TensorF& wv = windows.val();
    const std::int64_t M = grid.window;
    require(wv.rank() == 3 && wv.dim(0) == grid.num_windows() && wv.dim(1) == M * M,
            "grid-mismatch", "window_reverse input " + shape_str(wv.shape) + " does not match grid");
    const std::int64_t C = wv.dim(2);

    // slot index for each real (y, x): invert the fused shift+partition map.
    std::vector<std::int64_t> idx(static_cast<std::size_t>(grid.h * grid.w * C));
    for (std::int64_t y = 0; y < grid.h; ++y) {
        for (std::int64_t x = 0; x < grid.w; ++x) {
            const std::int64_t py = pos_mod(y - shift, grid.padded_h);
            const std::int64_t px = pos_mod(x - shift, grid.padded_w);
            const std::int64_t win = (py / M) * grid.wins_x() + px / M;
            const std::int64_t local = (py % M) * M + px % M;
            for (std::int64_t c = 0; c < C; ++c)
                idx[static_cast<std::size_t>((y * grid.w + x) * C + c)] = (win * M * M + local) * C + c;
        }
    }
    return gather(windows, make_index_map(std::move(idx)), Shape{grid.h, grid.w, C});
}

Value cyclic_shift(Value x_hwc, std::int64_t dy, std::int64_t dx) {
    const TensorF& xv = x_hwc.val();
    require(xv.rank() == 3, "shape-mismatch", "cyclic_shift input must be (h,w,C)");
    const std::int64_t h = xv.dim(0), w = xv.dim(1), C = xv.dim(2);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(h * w * C));
    for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t sy = pos_mod(y + dy, h);
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t sx = pos_mod(x + dx, w);
            for (std::int64_t c = 0; c < C; ++c)
                idx[static_cast<std::size_t>((y * w + x) * C + c)] = (sy * w + sx) * C + c;
        }
    }
    return gather(x_hwc, make_index_map(std::move(idx)), xv.shape);
}

TensorF shifted_window_mask(const WindowGrid& grid, std::int64_t shift) {
    if (shift == 0 && grid.pad_bottom == 0 && grid.pad_right == 0) return TensorF();
    const std::int64_t M = grid.window;
    const std::int64_t n = M * M;
    const auto origins = window_slot_origins(grid, shift);

    TensorF mask(Shape{grid.num_windows(), n, n});
    for (std::int64_t win = 0; win < grid.num_windows(); ++win) {
        const std::int64_t wy = win / grid.wins_x();
        const std::int64_t wx = win % grid.wins_x();
        for (std::int64_t p = 0; p < n; ++p) {
            const SlotOrigin& op = origins[static_cast<std::size_t>(win * n + p)];
            const std::int64_t py = wy * M + p / M;
            const std::int64_t px = wx * M + p % M;
            const std::int64_t rp = 3 * band(py, grid.padded_h, M, shift) + band(px, grid.padded_w, M, shift);
            for (std::int64_t q = 0; q < n; ++q) {
                const SlotOrigin& oq = origins[static_cast<std::size_t>(win * n + q)];
                const std::int64_t qy = wy * M + q / M;
                const std::int64_t qx = wx * M + q % M;
                const std::int64_t rq = 3 * band(qy, grid.padded_h, M, shift) + band(qx, grid.padded_w, M, shift);
                bool allowed;
                if (!op.real) {
                    allowed = (p == q); // pad queries attend themselves; output discarded
                } else {
                    allowed = oq.real && rp == rq;
                }
                mask.at(win, p, q) = allowed ? 0.0 : kMaskNegInf;
            }
        }
    }
    return mask;
}

} // namespace aau
