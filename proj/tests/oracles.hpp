#pragma once

// Naive reference implementations used as oracles. Everything here is written
// with plain loops, independent of the tape-based implementations it checks.

#include <cmath>
#include <vector>

#include "aau/tensor.hpp"

namespace oracle {

using aau::Shape;
using aau::TensorF;

inline TensorF linear(const TensorF& x, const TensorF& w, const TensorF& b) {
    const std::int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(1);
    TensorF y(Shape{n, cout});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < cout; ++j) {
            double acc = b.numel() ? b[j] : 0.0;
            for (std::int64_t c = 0; c < cin; ++c) acc += x.at(i, c) * w.at(c, j);
            y.at(i, j) = acc;
        }
    return y;
}

struct MhaWeights {
    TensorF wq, bq, wk, bk, wv, bv, wo, bo;
};

// Triple-loop multi-head attention. bias (heads, n, n) may be empty;
// mask (heads or 1, n, n) uses nonzero = masked-out, may be empty.
inline TensorF naive_mha(const TensorF& q_src, const TensorF& k_src, const TensorF& v_src,
                         const MhaWeights& w, int heads, const TensorF& bias, const TensorF& mask) {
    const std::int64_t n = q_src.dim(0), m = k_src.dim(0), C = q_src.dim(1);
    const std::int64_t Ch = C / heads;
    TensorF qp = linear(q_src, w.wq, w.bq);
    TensorF kp = linear(k_src, w.wk, w.bk);
    TensorF vp = linear(v_src, w.wv, w.bv);
    TensorF ctx(Shape{n, C});
    for (int h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < n; ++i) {
            std::vector<double> s(static_cast<std::size_t>(m));
            double mx = -1e308;
            for (std::int64_t j = 0; j < m; ++j) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < Ch; ++c) dot += qp.at(i, h * Ch + c) * kp.at(j, h * Ch + c);
                dot /= std::sqrt(static_cast<double>(Ch));
                if (bias.numel()) dot += bias.at(h, i, j);
                if (mask.numel()) {
                    const std::int64_t mh = mask.dim(0) == 1 ? 0 : h;
                    if (mask.at(mh, i, j) != 0.0) dot = -1e30;
                }
                s[static_cast<std::size_t>(j)] = dot;
                mx = std::max(mx, dot);
            }
            double z = 0.0;
            for (auto& e : s) {
                e = std::exp(e - mx);
                z += e;
            }
            for (std::int64_t j = 0; j < m; ++j)
                for (std::int64_t c = 0; c < Ch; ++c)
                    ctx.at(i, h * Ch + c) += (s[static_cast<std::size_t>(j)] / z) * vp.at(j, h * Ch + c);
        }
    }
    return linear(ctx, w.wo, w.bo);
}

// Double-loop three-term relative attention scores (heads, w, w).
inline TensorF naive_relative_scores(const TensorF& edq, const TensorF& edk, const TensorF& table,
                                     int heads) {
    const std::int64_t w = edq.dim(0), C = edq.dim(1);
    const std::int64_t Ch = C / heads;
    const std::int64_t width = (table.dim(0) + 1) / 2;
    TensorF out(Shape{heads, w, w});
    for (int h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < w; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                double dd = 0.0, dp = 0.0, pd = 0.0;
                for (std::int64_t c = 0; c < Ch; ++c) {
                    const std::int64_t cc = h * Ch + c;
                    dd += edq.at(i, cc) * edk.at(j, cc);
                    dp += edq.at(i, cc) * table.at(j - i + width - 1, cc);
                    pd += table.at(i - j + width - 1, cc) * edk.at(j, cc);
                }
                out.at(h, i, j) = (dd + dp + pd) / std::sqrt(static_cast<double>(Ch));
            }
    return out;
}

// Straightforward-domain Sinkhorn on an augmented (w+1)x(w+1) score matrix
// with marginals a = b = [1,...,1,w]; iterates until tight convergence.
inline TensorF naive_sinkhorn(const TensorF& aug_scores, double temperature, int iters = 500) {
    const std::int64_t n = aug_scores.dim(0); // w+1
    const std::int64_t w = n - 1;
    std::vector<double> a(static_cast<std::size_t>(n), 1.0);
    a.back() = static_cast<double>(w);
    TensorF K(Shape{n, n});
    for (std::int64_t i = 0; i < n * n; ++i) K[i] = std::exp(aug_scores[i] / temperature);
    std::vector<double> u(static_cast<std::size_t>(n), 1.0), v(static_cast<std::size_t>(n), 1.0);
    for (int it = 0; it < iters; ++it) {
        for (std::int64_t i = 0; i < n; ++i) {
            double kv = 0.0;
            for (std::int64_t j = 0; j < n; ++j) kv += K.at(i, j) * v[static_cast<std::size_t>(j)];
            u[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)] / kv;
        }
        for (std::int64_t j = 0; j < n; ++j) {
            double ku = 0.0;
            for (std::int64_t i = 0; i < n; ++i) ku += K.at(i, j) * u[static_cast<std::size_t>(i)];
            v[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)] / ku;
        }
    }
    TensorF t(Shape{n, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            t.at(i, j) = u[static_cast<std::size_t>(i)] * K.at(i, j) * v[static_cast<std::size_t>(j)];
    return t;
}

} // namespace oracle
