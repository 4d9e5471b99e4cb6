#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aau/gradcheck.hpp"
#include "aau/losses.hpp"
#include "aau/rng.hpp"

using namespace aau;

namespace {

TensorF rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    return Rng(seed).tensor_uniform(std::move(s), lo, hi);
}

// single-row assignment (1, w+1, w+1) with explicit entries
TensorF make_assignment(std::int64_t w, const std::vector<std::vector<double>>& rows) {
    TensorF t(Shape{1, w + 1, w + 1}, 1e-3);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            t.at(0, static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];
    return t;
}

} // namespace

TEST_CASE("relative response loss") {
    SUBCASE("perfect supervised probabilities give zero loss") {
        TensorF t = make_assignment(3, {{1.0, 0, 0, 0}, {0, 1.0, 0, 0}, {0, 0, 0, 1.0}});
        TensorF cols = TensorF::from({1, 3}, {0.0, 1.0, -1.0});
        TensorF occ = TensorF::from({1, 3}, {0.0, 0.0, 1.0});
        CHECK(loss_rr_value(t, cols, occ) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("single matched pixel at 0.5 gives ln 2") {
        TensorF t = make_assignment(3, {{0.5, 0.3, 0.1, 0.1}});
        TensorF cols = TensorF::from({1, 3}, {0.0, -1.0, -1.0});
        TensorF occ(Shape{1, 3});
        CHECK(loss_rr_value(t, cols, occ) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("two matched (1, 0.5) plus one occluded at 0.25 gives 0.5 ln2 + ln4") {
        TensorF t = make_assignment(
            3, {{1.0, 0, 0, 0}, {0, 0.5, 0.2, 0.3}, {0.25, 0.25, 0.25, 0.25}});
        TensorF cols = TensorF::from({1, 3}, {0.0, 1.0, -1.0});
        TensorF occ = TensorF::from({1, 3}, {0.0, 0.0, 1.0});
        const double expect = 0.5 * std::log(2.0) + std::log(4.0);
        CHECK(loss_rr_value(t, cols, occ) == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("fractional ground truth interpolates the two flanking columns") {
        TensorF t = make_assignment(3, {{0.6, 0.2, 0.1, 0.1}});
        TensorF cols = TensorF::from({1, 3}, {0.25, -1.0, -1.0});
        TensorF occ(Shape{1, 3});
        const double ti = 0.75 * 0.6 + 0.25 * 0.2;
        CHECK(loss_rr_value(t, cols, occ) == doctest::Approx(-std::log(ti)).epsilon(1e-12));
    }
    SUBCASE("zero probability clamps with a warning instead of failing") {
        TensorF t = make_assignment(2, {{0.0, 1.0, 0.0}});
        TensorF cols = TensorF::from({1, 2}, {0.0, -1.0});
        TensorF occ(Shape{1, 2});
        int warnings = 0;
        const double v = loss_rr_value(t, cols, occ, &warnings);
        CHECK(warnings == 1);
        CHECK(v == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
    }
    SUBCASE("gradient w.r.t. assignment entries") {
        TensorF cols = TensorF::from({1, 3}, {0.0, 1.4, -1.0});
        TensorF occ = TensorF::from({1, 3}, {0.0, 0.0, 1.0});
        Objective f = [&](Tape& t, const std::vector<Value>& in) {
            return loss_rr(t, in[0], cols, occ);
        };
        CHECK(grad_check(f, {rnd({1, 4, 4}, 31, 0.05, 1.0)}, 1e-5) < 1e-6);
    }
}

TEST_CASE("smooth L1 loss") {
    TensorF ones = TensorF::full({3}, 1.0);
    SUBCASE("exact prediction gives zero") {
        TensorF gt = TensorF::from({3}, {1.0, 2.0, 3.0});
        CHECK(loss_smooth_l1_value(gt, gt, ones) == 0.0);
    }
    SUBCASE("|e| = 0.5 gives 0.125 and |e| = 2 gives 1.5") {
        TensorF mask = TensorF::full({1}, 1.0);
        CHECK(loss_smooth_l1_value(TensorF::from({1}, {1.5}), TensorF::from({1}, {1.0}), mask) ==
              doctest::Approx(0.125).epsilon(1e-15));
        CHECK(loss_smooth_l1_value(TensorF::from({1}, {3.0}), TensorF::from({1}, {1.0}), mask) ==
              doctest::Approx(1.5).epsilon(1e-15));
    }
    SUBCASE("empty mask is rejected") {
        try {
            loss_smooth_l1_value(TensorF::full({3}, 0.0), TensorF::full({3}, 0.0), TensorF(Shape{3}));
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "empty-mask");
        }
    }
    SUBCASE("gradient away from the kink") {
        TensorF gt = rnd({6}, 32, -0.3, 0.3);
        TensorF mask = TensorF::full({6}, 1.0);
        Objective f = [&](Tape& t, const std::vector<Value>& in) {
            return loss_smooth_l1(t, in[0], gt, mask);
        };
        CHECK(grad_check(f, {rnd({6}, 33, 1.2, 2.0)}, 1e-5) < 1e-6);
    }
}

TEST_CASE("binary entropy loss") {
    SUBCASE("confident correct prediction vanishes") {
        CHECK(loss_be_value(TensorF::from({1}, {1.0 - 1e-15}), TensorF::from({1}, {1.0})) ==
              doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("uninformative prediction on a negative is ln 2") {
        CHECK(loss_be_value(TensorF::from({1}, {0.5}), TensorF::from({1}, {0.0})) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("pair (0.9 on y=1, 0.1 on y=0) averages to -log 0.9") {
        CHECK(loss_be_value(TensorF::from({2}, {0.9, 0.1}), TensorF::from({2}, {1.0, 0.0})) ==
              doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    }
    SUBCASE("gradient") {
        TensorF y = TensorF::from({5}, {1.0, 0.0, 1.0, 0.0, 1.0});
        Objective f = [&](Tape& t, const std::vector<Value>& in) {
            return loss_be(t, sigmoid(in[0]), y);
        };
        CHECK(grad_check(f, {rnd({5}, 34, -2.0, 2.0)}, 1e-5) < 1e-6);
    }
}

TEST_CASE("total loss") {
    auto mk = [](Tape& t, double v) { return t.input(TensorF::scalar(v)); };
    SUBCASE("all zero components sum to zero") {
        Tape t;
        CHECK(t.val(loss_total(mk(t, 0), mk(t, 0), mk(t, 0), mk(t, 0), LossWeights{}))[0] == 0.0);
    }
    SUBCASE("components (1,2,3,4) with unit weights sum to 10") {
        Tape t;
        CHECK(t.val(loss_total(mk(t, 1), mk(t, 2), mk(t, 3), mk(t, 4), LossWeights{}))[0] ==
              doctest::Approx(10.0));
    }
    SUBCASE("weights (2,0,0,0) with L_rr=0.5 give 1.0") {
        Tape t;
        LossWeights w{2.0, 0.0, 0.0, 0.0};
        CHECK(t.val(loss_total(mk(t, 0.5), mk(t, 9), mk(t, 9), mk(t, 9), w))[0] == doctest::Approx(1.0));
    }
    SUBCASE("non-finite component is rejected by name") {
        Tape t;
        try {
            loss_total(mk(t, 1), mk(t, std::nan("")), mk(t, 0), mk(t, 0), LossWeights{});
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "non-finite-loss");
            CHECK(std::string(e.what()).find("L_d1r") != std::string::npos);
        }
    }
    SUBCASE("total dominates each weighted non-negative component") {
        Tape t;
        LossWeights w{1.5, 0.5, 2.0, 1.0};
        Value total = loss_total(mk(t, 0.1), mk(t, 0.2), mk(t, 0.3), mk(t, 0.4), w);
        const double tv = t.val(total)[0];
        CHECK(tv >= 1.5 * 0.1);
        CHECK(tv >= 0.5 * 0.2);
        CHECK(tv >= 2.0 * 0.3);
        CHECK(tv >= 1.0 * 0.4);
    }
}

TEST_CASE("EPE and 3px metrics") {
    SUBCASE("perfect prediction") {
        TensorF gt = rnd({4, 4}, 35, 0.0, 9.0);
        TensorF mask = TensorF::full({4, 4}, 1.0);
        Metrics m = metrics_epe_3px(gt, gt, mask);
        CHECK(m.epe == 0.0);
        CHECK(m.err3px_percent == 0.0);
        CHECK(m.n_pixels == 16);
        CHECK(m.n_occluded == 0);
    }
    SUBCASE("errors [0,0,5] give EPE 5/3 and 33.33%") {
        TensorF pred = TensorF::from({3}, {1.0, 2.0, 8.0});
        TensorF gt = TensorF::from({3}, {1.0, 2.0, 3.0});
        TensorF mask = TensorF::full({3}, 1.0);
        Metrics m = metrics_epe_3px(pred, gt, mask);
        CHECK(m.epe == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
        CHECK(m.err3px_percent == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("error of exactly 3.0 does not count (strict inequality)") {
        TensorF pred = TensorF::full({5}, 4.0);
        TensorF gt = TensorF::full({5}, 1.0);
        TensorF mask = TensorF::full({5}, 1.0);
        Metrics m = metrics_epe_3px(pred, gt, mask);
        CHECK(m.epe == doctest::Approx(3.0));
        CHECK(m.err3px_percent == 0.0);
    }
    SUBCASE("empty mask is rejected") {
        try {
            metrics_epe_3px(TensorF(Shape{2, 2}), TensorF(Shape{2, 2}), TensorF(Shape{2, 2}));
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "empty-mask");
        }
    }
    SUBCASE("matches a scalar double-loop oracle exactly on random 32x32 maps") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            TensorF pred = rnd({32, 32}, 40 + seed, 0.0, 12.0);
            TensorF gt = rnd({32, 32}, 60 + seed, 0.0, 12.0);
            TensorF mask(Shape{32, 32});
            Rng mr(80 + seed);
            for (auto& v : mask.data) v = mr.uniform() < 0.8 ? 1.0 : 0.0;

            double sum = 0.0;
            std::int64_t n = 0, over = 0;
            for (std::int64_t y = 0; y < 32; ++y)
                for (std::int64_t x = 0; x < 32; ++x) {
                    if (mask.at(y, x) != 1.0) continue;
                    const double e = std::abs(pred.at(y, x) - gt.at(y, x));
                    sum += e;
                    ++n;
                    if (e > 3.0) ++over;
                }
            Metrics m = metrics_epe_3px(pred, gt, mask);
            CHECK(m.epe == sum / static_cast<double>(n));
            CHECK(m.err3px_percent == 100.0 * static_cast<double>(over) / static_cast<double>(n));
            CHECK(m.n_pixels == n);
        }
    }
}
