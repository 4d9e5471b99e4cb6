#include "aau/losses.hpp"

#include <cmath>

namespace aau {

namespace {
constexpr double kLogClamp = 1e-12;
}

Value loss_rr(Tape& t, Value assignment, const TensorF& gt_cols, const TensorF& occ,
              int* clamp_warnings) {
    const TensorF& tv = assignment.val();
    require(tv.rank() == 3 && tv.dim(1) == tv.dim(2), "shape-mismatch",
            "loss_rr expects (rows, w+1, w+1) assignments");
    const std::int64_t rows = tv.dim(0), n = tv.dim(1), w = n - 1;
    require(same_shape(gt_cols.shape, Shape{rows, w}) && same_shape(occ.shape, Shape{rows, w}),
            "shape-mismatch", "loss_rr ground truth maps");

    std::vector<std::int64_t> r0, r1, qidx;
    std::vector<double> w0, w1;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t i = 0; i < w; ++i) {
            if (occ.at(r, i) > 0.5) {
                qidx.push_back((r * n + i) * n + w);
                continue;
            }
            const double col = gt_cols.at(r, i);
            if (col < 0.0 || col > static_cast<double>(w - 1)) continue; // outside the row: unsupervised
            const auto j0 = static_cast<std::int64_t>(std::floor(col));
            const std::int64_t j1 = std::min(j0 + 1, w - 1);
            const double alpha = col - static_cast<double>(j0);
            r0.push_back((r * n + i) * n + j0);
            r1.push_back((r * n + i) * n + j1);
            w0.push_back(1.0 - alpha);
            w1.push_back(alpha);
        }
    }

    const auto count_clamped = [&](Value v) {
        if (!clamp_warnings) return;
        const TensorF& x = v.val();
        for (std::int64_t i = 0; i < x.numel(); ++i)
            if (x[i] < kLogClamp) ++*clamp_warnings;
    };

    Value total = t.input(TensorF::scalar(0.0));
    if (!r0.empty()) {
        const auto nr = static_cast<std::int64_t>(r0.size());
        Value t0 = gather(assignment, make_index_map(std::move(r0)), Shape{nr});
        Value t1 = gather(assignment, make_index_map(std::move(r1)), Shape{nr});
        Value ti = add(mul(t0, t.input(TensorF::from({nr}, std::move(w0)))),
                       mul(t1, t.input(TensorF::from({nr}, std::move(w1)))));
        count_clamped(ti);
        Value term = scale(sum_all(log_(clamp_min(ti, kLogClamp))), -1.0 / static_cast<double>(nr));
        total = add(total, term);
    }
    if (!qidx.empty()) {
        const auto nq = static_cast<std::int64_t>(qidx.size());
        Value tphi = gather(assignment, make_index_map(std::move(qidx)), Shape{nq});
        count_clamped(tphi);
        Value term = scale(sum_all(log_(clamp_min(tphi, kLogClamp))), -1.0 / static_cast<double>(nq));
        total = add(total, term);
    }
    return total;
}

Value loss_smooth_l1(Tape& t, Value pred, const TensorF& gt, const TensorF& mask) {
    const TensorF& pv = pred.val();
    require(same_shape(pv.shape, gt.shape) && same_shape(pv.shape, mask.shape), "shape-mismatch",
            "loss_smooth_l1 shapes");
    std::int64_t n_valid = 0;
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] > 0.5) ++n_valid;
    require(n_valid > 0, "empty-mask", "loss_smooth_l1 has no valid pixels");

    Value e = sub(pred, t.input(gt));
    Value h = mul(huber(e), t.input(mask));
    return scale(sum_all(h), 1.0 / static_cast<double>(n_valid));
}

Value loss_be(Tape& t, Value prob, const TensorF& y) {
    const TensorF& pv = prob.val();
    require(same_shape(pv.shape, y.shape), "shape-mismatch", "loss_be shapes");
    require(pv.numel() > 0, "empty-mask", "loss_be on empty map");
    TensorF y1 = y;
    TensorF y0(y.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y0[i] = 1.0 - y[i];
    Value lp = log_(clamp_min(prob, kLogClamp));
    Value lq = log_(clamp_min(sub(t.input(TensorF::full(pv.shape, 1.0)), prob), kLogClamp));
    Value ll = add(mul(t.input(std::move(y1)), lp), mul(t.input(std::move(y0)), lq));
    return neg(mean_all(ll));
}

Value loss_total(Value l_rr, Value l_d1r, Value l_d1f, Value l_be, const LossWeights& w) {
    require(w.w_rr >= 0 && w.w_d1r >= 0 && w.w_d1f >= 0 && w.w_be >= 0, "bad-config",
            "loss weights must be non-negative");
    const char* names[4] = {"L_rr", "L_d1r", "L_d1f", "L_be"};
    const Value comps[4] = {l_rr, l_d1r, l_d1f, l_be};
    for (int i = 0; i < 4; ++i)
        require(std::isfinite(comps[i].val()[0]), "non-finite-loss",
                std::string(names[i]) + " is not finite");
    Value total = scale(l_rr, w.w_rr);
    total = add(total, scale(l_d1r, w.w_d1r));
    total = add(total, scale(l_d1f, w.w_d1f));
    total = add(total, scale(l_be, w.w_be));
    return total;
}

double loss_rr_value(const TensorF& assignment, const TensorF& gt_cols, const TensorF& occ,
                     int* clamp_warnings) {
    Tape t;
    return t.val(loss_rr(t, t.input(assignment), gt_cols, occ, clamp_warnings))[0];
}

double loss_smooth_l1_value(const TensorF& pred, const TensorF& gt, const TensorF& mask) {
    Tape t;
    return t.val(loss_smooth_l1(t, t.input(pred), gt, mask))[0];
}

double loss_be_value(const TensorF& prob, const TensorF& y) {
    Tape t;
    return t.val(loss_be(t, t.input(prob), y))[0];
}

Metrics metrics_epe_3px(const TensorF& d_pred, const TensorF& d_gt, const TensorF& noc_mask) {
    require(same_shape(d_pred.shape, d_gt.shape) && same_shape(d_pred.shape, noc_mask.shape),
            "shape-mismatch", "metrics_epe_3px shapes");
    Metrics m;
    double sum = 0.0;
    std::int64_t over = 0;
    for (std::int64_t i = 0; i < d_pred.numel(); ++i) {
        if (noc_mask[i] <= 0.5) {
            ++m.n_occluded;
            continue;
        }
        const double e = std::abs(d_pred[i] - d_gt[i]);
        sum += e;
        if (e > 3.0) ++over;
        ++m.n_pixels;
    }
    require(m.n_pixels > 0, "empty-mask", "metrics_epe_3px has no evaluated pixels");
    m.epe = sum / static_cast<double>(m.n_pixels);
    m.err3px_percent = 100.0 * static_cast<double>(over) / static_cast<double>(m.n_pixels);
    return m;
}

} // namespace aau
