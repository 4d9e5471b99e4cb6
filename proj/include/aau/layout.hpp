#pragma once

#include "aau/tape.hpp"

namespace aau {

// (h,w,C) <-> (C,h,w) permutations as gathers.
inline Value hwc_to_chw(Value x) {
    const TensorF& v = x.val();
    require(v.rank() == 3, "shape-mismatch", "hwc_to_chw needs rank 3");
    const std::int64_t h = v.dim(0), w = v.dim(1), C = v.dim(2);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(v.numel()));
    std::size_t o = 0;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) idx[o++] = (y * w + xx) * C + c;
    return gather(x, make_index_map(std::move(idx)), Shape{C, h, w});
}

inline Value chw_to_hwc(Value x) {
    const TensorF& v = x.val();
    require(v.rank() == 3, "shape-mismatch", "chw_to_hwc needs rank 3");
    const std::int64_t C = v.dim(0), h = v.dim(1), w = v.dim(2);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(v.numel()));
    std::size_t o = 0;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx)
            for (std::int64_t c = 0; c < C; ++c) idx[o++] = (c * h + y) * w + xx;
    return gather(x, make_index_map(std::move(idx)), Shape{h, w, C});
}

} // namespace aau
