#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aau/gradcheck.hpp"
#include "aau/matching.hpp"
#include "oracles.hpp"

using namespace aau;

namespace {

TensorF rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    return Rng(seed).tensor_uniform(std::move(s), lo, hi);
}

// Builds a (1, w+1, w+1) assignment tensor from row masses for a single left
// pixel i, uniform elsewhere so no row is empty.
TensorF assignment_with_row(std::int64_t w, std::int64_t i, const std::vector<double>& row) {
    TensorF t(Shape{1, w + 1, w + 1}, 1.0 / static_cast<double>(w + 1));
    for (std::int64_t j = 0; j <= w; ++j) t.at(0, i, j) = row[static_cast<std::size_t>(j)];
    return t;
}

} // namespace

TEST_CASE("sinkhorn basics") {
    SUBCASE("w=1 with a strongly negative dustbin puts all mass on the single match") {
        AssignmentMatrix m = sinkhorn_ot(TensorF::full({1, 1}, 0.0), -40.0, 50, 1.0);
        CHECK(m.t.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("uniform scores give equal interior entries") {
        AssignmentMatrix m = sinkhorn_ot(TensorF::full({2, 2}, 0.3), 0.1, 50, 1.0);
        CHECK(m.t.at(0, 0) == doctest::Approx(m.t.at(0, 1)).epsilon(1e-12));
        CHECK(m.t.at(0, 0) == doctest::Approx(m.t.at(1, 0)).epsilon(1e-12));
        CHECK(m.t.at(0, 0) == doctest::Approx(m.t.at(1, 1)).epsilon(1e-12));
    }
    SUBCASE("random 4x4 matches the plain-domain oracle and hits marginals after 30 iters") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            TensorF scores = rnd({4, 4}, 100 + seed, -2.0, 2.0);
            const double bin = Rng(200 + seed).uniform(-1.0, 1.0);
            AssignmentMatrix m = sinkhorn_ot(scores, bin, 30, 1.0);
            CHECK(m.row_marginal_dev() < 1e-6);
            CHECK(m.col_marginal_dev() < 1e-6);

            TensorF aug(Shape{5, 5});
            for (std::int64_t i = 0; i < 5; ++i)
                for (std::int64_t j = 0; j < 5; ++j)
                    aug.at(i, j) = (i < 4 && j < 4) ? scores.at(i, j) : bin;
            TensorF oracle_t = oracle::naive_sinkhorn(aug, 1.0, 800);
            CHECK(max_abs_diff(m.t, oracle_t) < 1e-6);
        }
    }
    SUBCASE("adding a constant to every score leaves the transport unchanged") {
        TensorF scores = rnd({5, 5}, 7, -1.0, 1.0);
        AssignmentMatrix a = sinkhorn_ot(scores, 0.2, 40, 1.0);
        TensorF shifted = scores;
        for (auto& v : shifted.data) v += 3.7;
        AssignmentMatrix b = sinkhorn_ot(shifted, 0.2 + 3.7, 40, 1.0);
        CHECK(max_abs_diff(a.t, b.t) < 1e-9);
    }
    SUBCASE("non-finite scores are rejected") {
        TensorF scores = TensorF::full({2, 2}, 0.0);
        scores.at(0, 1) = std::nan("");
        try {
            sinkhorn_ot(scores, 0.0, 10, 1.0);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "non-finite-cost");
        }
    }
    SUBCASE("entries are non-negative and real entries stay within [0,1]") {
        TensorF scores = rnd({6, 6}, 8, -3.0, 3.0);
        AssignmentMatrix m = sinkhorn_ot(scores, 0.5, 40, 1.0);
        for (std::int64_t i = 0; i < 7; ++i)
            for (std::int64_t j = 0; j < 7; ++j) {
                CHECK(m.t.at(i, j) >= 0.0);
                if (i < 6 || j < 6) CHECK(m.t.at(i, j) <= 1.0 + 1e-9);
            }
    }
}

TEST_CASE("raw regression") {
    SUBCASE("one-hot row: exact disparity, confidence 1, not occluded") {
        TensorF tv = assignment_with_row(4, 3, {0.0, 1.0, 0.0, 0.0, 0.0});
        Tape t;
        RawRegression r = raw_regression(t, t.input(tv), 3, 0.3);
        CHECK(t.val(r.d_raw).at(0, 3) == doctest::Approx(2.0).epsilon(1e-12)); // i=3 matches j=1
        CHECK(t.val(r.confidence).at(0, 3) == doctest::Approx(1.0));
        CHECK(r.occ_flags.at(0, 3) == 0.0);
    }
    SUBCASE("split mass interpolates to the half-pixel position") {
        TensorF tv = assignment_with_row(4, 3, {0.0, 0.5, 0.5, 0.0, 0.0});
        Tape t;
        RawRegression r = raw_regression(t, t.input(tv), 3, 0.3);
        CHECK(t.val(r.d_raw).at(0, 3) == doctest::Approx(3.0 - 1.5).epsilon(1e-12));
    }
    SUBCASE("all mass on the dustbin flags occlusion and zeroes the output map") {
        TensorF tv = assignment_with_row(4, 2, {1e-9, 1e-9, 1e-9, 1e-9, 1.0});
        Tape t;
        RawRegression r = raw_regression(t, t.input(tv), 3, 0.3);
        CHECK(r.occ_flags.at(0, 2) == 1.0);
        CHECK(r.d_raw_out.at(0, 2) == 0.0);
        CHECK(t.val(r.t_phi).at(0, 2) == doctest::Approx(1.0));
    }
    SUBCASE("argmax column is invariant under positive rescaling of a row") {
        TensorF base = rnd({1, 6, 6}, 9, 0.01, 1.0);
        TensorF scaled = base;
        for (std::int64_t j = 0; j < 6; ++j) scaled.at(0, 2, j) *= 7.5;
        Tape t1, t2;
        RawRegression a = raw_regression(t1, t1.input(base), 3, 0.0);
        RawRegression b = raw_regression(t2, t2.input(scaled), 3, 0.0);
        // same chosen columns -> same window -> same subpixel position
        CHECK(t1.val(a.d_raw).at(0, 2) == doctest::Approx(t2.val(b.d_raw).at(0, 2)).epsilon(1e-12));
    }
    SUBCASE("gradient of mean(d_raw) w.r.t. scores passes grad_check") {
        TensorF scores = rnd({2, 5, 5}, 10, -1.0, 1.0);
        Parameter bin("bin", TensorF::scalar(0.1));
        Objective f = [&bin](Tape& t, const std::vector<Value>& in) {
            Value tmat = sinkhorn_batched(t, in[0], t.leaf(bin), 8, 1.0);
            RawRegression r = raw_regression(t, tmat, 3, 0.3);
            return mean_all(r.d_raw);
        };
        CHECK(grad_check(f, {scores}, 1e-5) < 1e-5);
    }
}

TEST_CASE("bilinear upsampling of token maps") {
    SUBCASE("constant maps stay constant and scale with stride") {
        Tape t;
        Value up = bilinear_upsample_tokens(scale(t.input(TensorF::full({3, 4}, 2.5)), 2.0), 6, 8, 2);
        const TensorF& u = t.val(up);
        CHECK(u.shape == Shape{6, 8});
        for (std::int64_t i = 0; i < u.numel(); ++i) CHECK(u[i] == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("grid mismatch is rejected") {
        Tape t;
        try {
            bilinear_upsample_tokens(t.input(TensorF::full({3, 3}, 1.0)), 6, 8, 2);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "shape-mismatch");
        }
    }
}

TEST_CASE("context adjustment") {
    Rng rng(11);
    ParamStore store;
    ContextAdjustParams p = make_context_adjust_params(store, 8, 2, true, rng);

    TensorF d_raw = rnd({4, 6}, 12, 0.0, 3.0);
    TensorF occ(Shape{4, 6});
    TensorF img = rnd({8, 12, 3}, 13, 0.0, 1.0);

    SUBCASE("zero-initialized disparity head leaves the upsampled base untouched") {
        Tape t;
        ContextOut o = context_adjust(t, p, t.input(d_raw), occ, t.input(img), 2);
        CHECK(bit_identical(t.val(o.d_final), t.val(o.d_base)));
    }
    SUBCASE("constant raw disparity c at stride 2 upsamples to constant 2c") {
        Tape t;
        ContextOut o = context_adjust(t, p, t.input(TensorF::full({4, 6}, 1.25)), occ, t.input(img), 2);
        const TensorF& base = t.val(o.d_base);
        for (std::int64_t i = 0; i < base.numel(); ++i)
            CHECK(base[i] == doctest::Approx(2.5).epsilon(1e-12));
    }
    SUBCASE("occlusion head output lies strictly inside (0,1)") {
        Tape t;
        ContextOut o = context_adjust(t, p, t.input(d_raw), occ, t.input(img), 2);
        const TensorF& of = t.val(o.occ_final);
        CHECK(of.shape == Shape{8, 12});
        for (std::int64_t i = 0; i < of.numel(); ++i) {
            CHECK(of[i] > 0.0);
            CHECK(of[i] < 1.0);
        }
    }
    SUBCASE("disparity residual actually flows once the head is non-zero") {
        p.disp_w->value = rnd({1, 8, 3, 3}, 14, -0.1, 0.1);
        Tape t;
        ContextOut o = context_adjust(t, p, t.input(d_raw), occ, t.input(img), 2);
        CHECK(max_abs_diff(t.val(o.d_final), t.val(o.d_base)) > 0.0);
    }
    SUBCASE("mismatched occlusion map shape is rejected") {
        Tape t;
        try {
            context_adjust(t, p, t.input(d_raw), TensorF(Shape{3, 6}), t.input(img), 2);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "shape-mismatch");
        }
    }
}
