#include "aau/analysis.hpp"

#include <cmath>

#include "aau/rng.hpp"

namespace aau {

ComplexityReport flops_eq23(std::int64_t h, std::int64_t w, std::int64_t C, std::int64_t M) {
    require(h >= 1 && w >= 1 && C >= 1 && M >= 1, "bad-config", "flops_eq23 needs positive dims");
    ComplexityReport r;
    r.h = h;
    r.w = w;
    r.C = C;
    r.M = M;
    const auto hw = static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w);
    const auto uc = static_cast<std::uint64_t>(C);
    r.omega_isa = 4 * hw * uc * uc + 2 * hw * static_cast<std::uint64_t>(w) * uc;
    r.omega_wsa = 4 * hw * uc * uc + 2 * static_cast<std::uint64_t>(M * M) * hw * uc;
    r.isa_over_wsa = static_cast<double>(r.omega_isa) / static_cast<double>(r.omega_wsa);
    return r;
}

// ---------------------------------------------------------------------------

PcaResult pca_project(const TensorF& features, int k) {
    require(features.rank() == 2, "shape-mismatch", "pca_project expects (n, C)");
    const std::int64_t n = features.dim(0), C = features.dim(1);
    require(n > 1, "bad-k", "pca needs more than one sample");
    require(k >= 1 && k <= std::min(n, C), "bad-k",
            "k must lie in [1, min(n, C)], got " + std::to_string(k));

    // mean-centered covariance (C x C)
    std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < C; ++c) mean[static_cast<std::size_t>(c)] += features.at(i, c);
    for (auto& m : mean) m /= static_cast<double>(n);

    TensorF cov(Shape{C, C});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t a = 0; a < C; ++a) {
            const double xa = features.at(i, a) - mean[static_cast<std::size_t>(a)];
            for (std::int64_t b = a; b < C; ++b)
                cov.at(a, b) += xa * (features.at(i, b) - mean[static_cast<std::size_t>(b)]);
        }
    for (std::int64_t a = 0; a < C; ++a)
        for (std::int64_t b = 0; b < a; ++b) cov.at(a, b) = cov.at(b, a);
    for (auto& v : cov.data) v /= static_cast<double>(n - 1);

    double total_var = 0.0;
    for (std::int64_t a = 0; a < C; ++a) total_var += cov.at(a, a);

    PcaResult res;
    res.components = TensorF(Shape{k, C});
    res.explained_ratio.assign(static_cast<std::size_t>(k), 0.0);

    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::int64_t c = 0; c < C; ++c)
            s += a[static_cast<std::size_t>(c)] * b[static_cast<std::size_t>(c)];
        return s;
    };

    std::vector<std::vector<double>> found;
    for (int comp = 0; comp < k; ++comp) {
        Rng rng(0x5eed + static_cast<std::uint64_t>(comp));
        std::vector<double> v(static_cast<std::size_t>(C));
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);

        auto orthonormalize = [&](std::vector<double>& x) {
            for (const auto& u : found) {
                const double d = dot(x, u);
                for (std::int64_t c = 0; c < C; ++c)
                    x[static_cast<std::size_t>(c)] -= d * u[static_cast<std::size_t>(c)];
            }
            const double nrm = std::sqrt(dot(x, x));
            if (nrm > 1e-300)
                for (auto& e : x) e /= nrm;
            return nrm;
        };
        orthonormalize(v);

        double lambda = 0.0;
        for (int it = 0; it < 500; ++it) {
            std::vector<double> w(static_cast<std::size_t>(C), 0.0);
            for (std::int64_t a = 0; a < C; ++a) {
                double s = 0.0;
                for (std::int64_t b = 0; b < C; ++b) s += cov.at(a, b) * v[static_cast<std::size_t>(b)];
                w[static_cast<std::size_t>(a)] = s;
            }
            const double raw = std::sqrt(dot(w, w));
            const double nrm = orthonormalize(w);
            if (nrm <= 1e-300) {
                // remaining spectrum is (numerically) zero; keep current v
                lambda = 0.0;
                break;
            }
            double delta = 0.0;
            for (std::int64_t c = 0; c < C; ++c)
                delta = std::max(delta, std::abs(w[static_cast<std::size_t>(c)] - v[static_cast<std::size_t>(c)]));
            v = w;
            lambda = raw; // ||C v|| with unit v approximates |lambda|
            if (delta < 1e-12) break;
        }
        // Rayleigh quotient for the settled direction
        {
            std::vector<double> w(static_cast<std::size_t>(C), 0.0);
            for (std::int64_t a = 0; a < C; ++a) {
                double s = 0.0;
                for (std::int64_t b = 0; b < C; ++b) s += cov.at(a, b) * v[static_cast<std::size_t>(b)];
                w[static_cast<std::size_t>(a)] = s;
            }
            lambda = dot(v, w);
        }
        for (std::int64_t c = 0; c < C; ++c) res.components.at(comp, c) = v[static_cast<std::size_t>(c)];
        res.explained_ratio[static_cast<std::size_t>(comp)] =
            total_var > 0.0 ? std::max(0.0, lambda) / total_var : 0.0;
        found.push_back(std::move(v));
    }

    res.projected = TensorF(Shape{n, k});
    for (std::int64_t i = 0; i < n; ++i)
        for (int comp = 0; comp < k; ++comp) {
            double s = 0.0;
            for (std::int64_t c = 0; c < C; ++c)
                s += (features.at(i, c) - mean[static_cast<std::size_t>(c)]) * res.components.at(comp, c);
            res.projected.at(i, comp) = s;
        }
    return res;
}

// ---------------------------------------------------------------------------

namespace {

TensorF mat3_mul(const TensorF& a, const TensorF& b) {
    TensorF y(Shape{3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) y.at(i, j) += a.at(i, k) * b.at(k, j);
    return y;
}

TensorF mat3_inverse(const TensorF& m, const char* err_code) {
    const double det = m.at(0, 0) * (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1)) -
                       m.at(0, 1) * (m.at(1, 0) * m.at(2, 2) - m.at(1, 2) * m.at(2, 0)) +
                       m.at(0, 2) * (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0));
    require(std::abs(det) > 1e-12, err_code, "3x3 matrix is singular");
    TensorF inv(Shape{3, 3});
    inv.at(0, 0) = (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1)) / det;
    inv.at(0, 1) = (m.at(0, 2) * m.at(2, 1) - m.at(0, 1) * m.at(2, 2)) / det;
    inv.at(0, 2) = (m.at(0, 1) * m.at(1, 2) - m.at(0, 2) * m.at(1, 1)) / det;
    inv.at(1, 0) = (m.at(1, 2) * m.at(2, 0) - m.at(1, 0) * m.at(2, 2)) / det;
    inv.at(1, 1) = (m.at(0, 0) * m.at(2, 2) - m.at(0, 2) * m.at(2, 0)) / det;
    inv.at(1, 2) = (m.at(0, 2) * m.at(1, 0) - m.at(0, 0) * m.at(1, 2)) / det;
    inv.at(2, 0) = (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0)) / det;
    inv.at(2, 1) = (m.at(0, 1) * m.at(2, 0) - m.at(0, 0) * m.at(2, 1)) / det;
    inv.at(2, 2) = (m.at(0, 0) * m.at(1, 1) - m.at(0, 1) * m.at(1, 0)) / det;
    return inv;
}

TensorF mat3_transpose(const TensorF& m) {
    TensorF y(Shape{3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) y.at(i, j) = m.at(j, i);
    return y;
}

} // namespace

CameraGeometry CameraGeometry::make(TensorF K, TensorF R, std::array<double, 3> t) {
    require(same_shape(K.shape, Shape{3, 3}) && same_shape(R.shape, Shape{3, 3}), "shape-mismatch",
            "camera matrices must be 3x3");
    TensorF rrt = mat3_mul(R, mat3_transpose(R));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            require(std::abs(rrt.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-9, "bad-rotation",
                    "R is not orthonormal within 1e-9");
    CameraGeometry g;
    g.K = std::move(K);
    g.R = std::move(R);
    g.t = t;
    return g;
}

TensorF CameraGeometry::t_cross() const {
    TensorF m(Shape{3, 3});
    m.at(0, 1) = -t[2];
    m.at(0, 2) = t[1];
    m.at(1, 0) = t[2];
    m.at(1, 2) = -t[0];
    m.at(2, 0) = -t[1];
    m.at(2, 1) = t[0];
    return m;
}

double epipolar_residual(const std::array<double, 3>& p_l, const std::array<double, 3>& p_r,
                         const CameraGeometry& geom) {
    const TensorF kinv = mat3_inverse(geom.K, "singular-intrinsics");
    const TensorF e = mat3_mul(mat3_mul(mat3_transpose(kinv), geom.t_cross()), mat3_mul(geom.R, kinv));
    double res = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) res += p_l[static_cast<std::size_t>(i)] * e.at(i, j) * p_r[static_cast<std::size_t>(j)];
    return res;
}

} // namespace aau
