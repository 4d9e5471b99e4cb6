#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "aau/attention.hpp"
#include "aau/window.hpp"
#include "oracles.hpp"

using namespace aau;

namespace {

TensorF rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    return Rng(seed).tensor_uniform(std::move(s), lo, hi);
}

oracle::MhaWeights weights_of(const MhaParams& p) {
    return oracle::MhaWeights{p.q.w->value, p.q.b->value, p.k.w->value, p.k.b->value,
                              p.v.w->value, p.v.b->value, p.out.w->value, p.out.b->value};
}

} // namespace

TEST_CASE("window partition basics") {
    SUBCASE("h=w=M gives one window equal to the input") {
        TensorF x = rnd({3, 3, 2}, 5);
        Tape t;
        WindowGrid g = make_window_grid(3, 3, 3);
        Value w = window_partition(t.input(x), g);
        CHECK(t.shape(w) == Shape{1, 9, 2});
        for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(t.val(w)[i] == x[i]);
    }
    SUBCASE("4x4 with M=2: element (2,3) lands in window 3 at local (0,1)") {
        TensorF x(Shape{4, 4, 1});
        for (std::int64_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
        Tape t;
        WindowGrid g = make_window_grid(4, 4, 2);
        CHECK(g.num_windows() == 4);
        Value w = window_partition(t.input(x), g);
        // window 3 is the bottom-right window; local (0,1) is its second slot
        CHECK(t.val(w).at(3, 1, 0) == x.at(2, 3, 0));
    }
    SUBCASE("13x11 with M=7 roundtrips exactly with pad (1,3)") {
        TensorF x = rnd({13, 11, 4}, 6);
        WindowGrid g = make_window_grid(13, 11, 7);
        CHECK(g.pad_bottom == 1);
        CHECK(g.pad_right == 3);
        Tape t;
        Value back = window_reverse(window_partition(t.input(x), g), g);
        CHECK(bit_identical(t.val(back), x));
    }
    SUBCASE("errors") {
        CHECK_THROWS_WITH_AS(make_window_grid(4, 4, 0), doctest::Contains("bad-window"), Error);
        TensorF x = rnd({4, 4, 1}, 7);
        Tape t;
        WindowGrid g = make_window_grid(4, 4, 2);
        Value w = window_partition(t.input(x), g);
        WindowGrid other = make_window_grid(6, 6, 2);
        CHECK_THROWS_WITH_AS(window_reverse(w, other), doctest::Contains("grid-mismatch"), Error);
    }
    SUBCASE("partition is a bijection on elements (multiset preserved)") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            Rng r(seed);
            const auto h = r.uniform_int(1, 9), w = r.uniform_int(1, 9), M = r.uniform_int(1, 4);
            TensorF x = rnd({h, w, 2}, seed + 100);
            WindowGrid g = make_window_grid(h, w, M);
            Tape t;
            const TensorF& wins = t.val(window_partition(t.input(x), g, (seed % 2) ? M / 2 : 0));
            std::multiset<double> in(x.data.begin(), x.data.end());
            std::multiset<double> out(wins.data.begin(), wins.data.end());
            // output also contains one zero per padded slot
            const auto pads = static_cast<std::size_t>(wins.numel() - x.numel());
            for (std::size_t i = 0; i < pads; ++i) in.insert(0.0);
            CHECK(in == out);
        }
    }
}

TEST_CASE("cyclic shift") {
    SUBCASE("zero shift is the identity") {
        TensorF x = rnd({3, 5, 2}, 8);
        Tape t;
        CHECK(bit_identical(t.val(cyclic_shift(t.input(x), 0, 0)), x));
    }
    SUBCASE("row [a,b,c,d] shifted by dx=1 becomes [b,c,d,a]") {
        TensorF x = TensorF::from({1, 4, 1}, {1.0, 2.0, 3.0, 4.0});
        Tape t;
        const TensorF& y = t.val(cyclic_shift(t.input(x), 0, 1));
        CHECK(y[0] == 2.0);
        CHECK(y[1] == 3.0);
        CHECK(y[2] == 4.0);
        CHECK(y[3] == 1.0);
    }
    SUBCASE("shift then inverse shift restores the input") {
        TensorF x = rnd({7, 7, 3}, 9);
        Tape t;
        Value s = cyclic_shift(t.input(x), 3, 3);
        CHECK(bit_identical(t.val(cyclic_shift(s, -3, -3)), x));
    }
}

TEST_CASE("multi-head attention") {
    Rng rng(42);
    ParamStore store;
    MhaParams p = make_mha_params(store, "mha", 8, 2, rng);

    SUBCASE("singleton key set: output is out-projection of v's value-projection") {
        TensorF v_src = rnd({1, 8}, 1);
        Tape t;
        AttentionOut a = multi_head_attention(t, p, t.input(v_src), t.input(v_src), t.input(v_src));
        TensorF vp = oracle::linear(v_src, p.v.w->value, p.v.b->value);
        TensorF expect = oracle::linear(vp, p.out.w->value, p.out.b->value);
        CHECK(max_abs_diff(t.val(a.out), TensorF::from({1, 1, 8}, expect.data)) < 1e-12);
    }
    SUBCASE("identical keys give uniform attention weights") {
        TensorF q = rnd({5, 8}, 2);
        TensorF kv(Shape{5, 8});
        TensorF onek = rnd({8}, 3);
        for (int i = 0; i < 5; ++i)
            for (int c = 0; c < 8; ++c) kv.at(i, c) = onek[c];
        Tape t;
        AttentionOut a = multi_head_attention(t, p, t.input(q), t.input(kv), t.input(kv));
        const TensorF& probs = t.val(a.probs);
        for (std::int64_t i = 0; i < probs.numel(); ++i)
            CHECK(probs[i] == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("matches naive triple-loop oracle within 1e-10") {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            TensorF q = rnd({5, 8}, 10 + seed), k = rnd({5, 8}, 40 + seed), v = rnd({5, 8}, 70 + seed);
            Tape t;
            AttentionOut a = multi_head_attention(t, p, t.input(q), t.input(k), t.input(v));
            TensorF expect = oracle::naive_mha(q, k, v, weights_of(p), p.heads, TensorF(), TensorF());
            CHECK(max_abs_diff(t.val(a.out), TensorF::from({1, 5, 8}, expect.data)) < 1e-10);
        }
    }
    SUBCASE("fully masked query row is an error") {
        TensorF q = rnd({3, 8}, 4);
        TensorF mask(Shape{1, 3, 3});
        for (std::int64_t j = 0; j < 3; ++j) mask.at(0, 1, j) = kMaskNegInf;
        Tape t;
        try {
            multi_head_attention(t, p, t.input(q), t.input(q), t.input(q), std::nullopt, &mask);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "all-masked-row");
        }
    }
    SUBCASE("output invariant under consistent permutation of keys and values") {
        TensorF q = rnd({4, 8}, 5), k = rnd({4, 8}, 6), v = rnd({4, 8}, 7);
        std::vector<std::int64_t> perm = {2, 0, 3, 1};
        TensorF kp(Shape{4, 8}), vp(Shape{4, 8});
        for (int i = 0; i < 4; ++i)
            for (int c = 0; c < 8; ++c) {
                kp.at(i, c) = k.at(perm[static_cast<std::size_t>(i)], c);
                vp.at(i, c) = v.at(perm[static_cast<std::size_t>(i)], c);
            }
        Tape t1, t2;
        AttentionOut a = multi_head_attention(t1, p, t1.input(q), t1.input(k), t1.input(v));
        AttentionOut b = multi_head_attention(t2, p, t2.input(q), t2.input(kp), t2.input(vp));
        CHECK(max_abs_diff(t1.val(a.out), t2.val(b.out)) < 1e-12);
    }
}

TEST_CASE("relative bias table") {
    Rng rng(11);
    ParamStore store;

    SUBCASE("M=1: single entry is the whole bias") {
        RelativeBiasTable tb = make_relative_bias_table(store, "b1", 1, 1);
        tb.table->value[0] = 0.7;
        Tape t;
        const TensorF& b = t.val(relative_bias_lookup(t, tb));
        CHECK(b.shape == Shape{1, 1, 1});
        CHECK(b[0] == 0.7);
    }
    SUBCASE("M=2: pairs with equal offsets share a table row") {
        RelativeBiasTable tb = make_relative_bias_table(store, "b2", 2, 1);
        for (std::int64_t i = 0; i < tb.table->value.numel(); ++i)
            tb.table->value[i] = static_cast<double>(i) * 0.25;
        Tape t;
        const TensorF& b = t.val(relative_bias_lookup(t, tb));
        // slots row-major in a 2x2 window: 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1)
        CHECK(b.at(0, 0, 1) == b.at(0, 2, 3)); // both offset (0,1)
        CHECK(b.at(0, 0, 2) == b.at(0, 1, 3)); // both offset (1,0)
        CHECK(b.at(0, 1, 0) != b.at(0, 0, 1)); // opposite offsets differ
    }
    SUBCASE("zero table leaves attention unbiased") {
        MhaParams p = make_mha_params(store, "mha0", 8, 2, rng);
        RelativeBiasTable tb = make_relative_bias_table(store, "b3", 2, 2);
        TensorF x = rnd({4, 4, 8}, 12);
        Tape t1, t2;
        Value with_bias = window_self_attention(t1, t1.input(x), p, &tb, 2, 0);
        Value no_bias = window_self_attention(t2, t2.input(x), p, nullptr, 2, 0);
        CHECK(bit_identical(t1.val(with_bias), t2.val(no_bias)));
    }
    SUBCASE("offsets outside the window are rejected") {
        CHECK_THROWS_WITH_AS(relative_bias_index(2, 2, 0), doctest::Contains("offset-range"), Error);
    }
}

TEST_CASE("window attention MAC count equals 4hwC^2 + 2M^2hwC") {
    Rng rng(21);
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        Rng pick(seed + 50);
        const std::int64_t M = pick.uniform_int(1, 4);
        const std::int64_t h = M * pick.uniform_int(1, 3);
        const std::int64_t w = M * pick.uniform_int(1, 3);
        const std::int64_t C = 4 * pick.uniform_int(1, 3);
        ParamStore store;
        MhaParams p = make_mha_params(store, "m" + std::to_string(seed), C, 2, rng);
        Tape t;
        MacCounter::count() = 0;
        window_self_attention(t, t.input(rnd({h, w, C}, seed)), p, nullptr, M, 0);
        const std::uint64_t expect =
            4ull * static_cast<std::uint64_t>(h * w * C * C) + 2ull * static_cast<std::uint64_t>(M * M * h * w * C);
        CHECK(MacCounter::count() == expect);
    }
}

TEST_CASE("shifted window attention matches a no-wrap oracle") {
    // Compare against per-token attention over independently recomputed
    // allowed sets (same shifted window, same region bands, real tokens only).
    Rng rng(31);
    ParamStore store;
    const std::int64_t h = 5, w = 6, C = 4, M = 2, shift = 1;
    MhaParams p = make_mha_params(store, "mh", C, 2, rng);
    TensorF x = rnd({h, w, C}, 33);

    Tape t;
    Value out = window_self_attention(t, t.input(x), p, nullptr, M, shift);
    const TensorF& got = t.val(out);

    WindowGrid g = make_window_grid(h, w, M);
    auto bandf = [&](std::int64_t v, std::int64_t padded) {
        if (v < padded - M) return 0;
        if (v < padded - shift) return 1;
        return 2;
    };
    auto mod = [](std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; };

    // project all tokens once
    TensorF flat(Shape{h * w, C});
    for (std::int64_t i = 0; i < h * w * C; ++i) flat[i] = x[i];
    TensorF qp = oracle::linear(flat, p.q.w->value, p.q.b->value);
    TensorF kp = oracle::linear(flat, p.k.w->value, p.k.b->value);
    TensorF vp = oracle::linear(flat, p.v.w->value, p.v.b->value);

    const std::int64_t Ch = C / p.heads;
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t xx = 0; xx < w; ++xx) {
            const std::int64_t py = mod(y - shift, g.padded_h), px = mod(xx - shift, g.padded_w);
            std::vector<std::int64_t> allowed;
            for (std::int64_t y2 = 0; y2 < h; ++y2)
                for (std::int64_t x2 = 0; x2 < w; ++x2) {
                    const std::int64_t qy = mod(y2 - shift, g.padded_h), qx = mod(x2 - shift, g.padded_w);
                    const bool same_win = (py / M == qy / M) && (px / M == qx / M);
                    const bool same_region = bandf(py, g.padded_h) == bandf(qy, g.padded_h) &&
                                             bandf(px, g.padded_w) == bandf(qx, g.padded_w);
                    if (same_win && same_region) allowed.push_back(y2 * w + x2);
                }
            TensorF ctx(Shape{1, C});
            const std::int64_t qi = y * w + xx;
            for (int hd = 0; hd < p.heads; ++hd) {
                std::vector<double> s;
                double mx = -1e308;
                for (auto j : allowed) {
                    double dot = 0.0;
                    for (std::int64_t c = 0; c < Ch; ++c) dot += qp.at(qi, hd * Ch + c) * kp.at(j, hd * Ch + c);
                    dot /= std::sqrt(static_cast<double>(Ch));
                    s.push_back(dot);
                    mx = std::max(mx, dot);
                }
                double z = 0.0;
                for (auto& e : s) {
                    e = std::exp(e - mx);
                    z += e;
                }
                for (std::size_t a = 0; a < allowed.size(); ++a)
                    for (std::int64_t c = 0; c < Ch; ++c)
                        ctx.at(0, hd * Ch + c) += (s[a] / z) * vp.at(allowed[a], hd * Ch + c);
            }
            TensorF expect = oracle::linear(ctx, p.out.w->value, p.out.b->value);
            for (std::int64_t c = 0; c < C; ++c)
                CHECK(got.at(y, xx, c) == doctest::Approx(expect.at(0, c)).epsilon(1e-10));
        }
    }
}

TEST_CASE("relative scores eq11 against double-loop oracle") {
    Rng rng(61);
    ParamStore store;
    EpTable ep = make_ep_table(store, "x", 3, 8, rng);
    SUBCASE("zero table reduces to plain scaled dot products") {
        ep.table->value.fill(0.0);
        TensorF q = rnd({3, 8}, 62), k = rnd({3, 8}, 63);
        Tape t;
        const TensorF& s = t.val(relative_scores_eq11(t, t.input(q), t.input(k), ep, 2));
        for (int h = 0; h < 2; ++h)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    double dot = 0.0;
                    for (int c = 0; c < 4; ++c) dot += q.at(i, h * 4 + c) * k.at(j, h * 4 + c);
                    CHECK(s.at(h, i, j) == doctest::Approx(dot / 2.0).epsilon(1e-12));
                }
    }
    SUBCASE("zero data vectors annihilate all three terms") {
        Rng r2(64);
        ep.table->value = r2.tensor_uniform({5, 8}, -1.0, 1.0).data.empty()
                              ? ep.table->value
                              : r2.tensor_uniform({5, 8}, -1.0, 1.0);
        TensorF z(Shape{3, 8});
        Tape t;
        const TensorF& s = t.val(relative_scores_eq11(t, t.input(z), t.input(z), ep, 2));
        for (std::int64_t i = 0; i < s.numel(); ++i) CHECK(s[i] == 0.0);
    }
    SUBCASE("random vectors match the three-term oracle within 1e-10") {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            Rng r3(seed + 200);
            ep.table->value = r3.tensor_uniform({5, 8}, -1.0, 1.0);
            TensorF q = rnd({3, 8}, 300 + seed), k = rnd({3, 8}, 400 + seed);
            Tape t;
            const TensorF& got = t.val(relative_scores_eq11(t, t.input(q), t.input(k), ep, 2));
            TensorF expect = oracle::naive_relative_scores(q, k, ep.table->value, 2);
            CHECK(max_abs_diff(got, expect) < 1e-10);
        }
    }
    SUBCASE("table too small for the row width is rejected") {
        TensorF q = rnd({4, 8}, 65);
        Tape t;
        try {
            relative_scores_eq11(t, t.input(q), t.input(q), ep, 2);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "offset-range");
        }
    }
}
