#pragma once

#include <array>
#include <vector>

#include "aau/tensor.hpp"

namespace aau {

// Exact multiply-accumulate counts of intra-row self-attention vs window
// self-attention on an (h, w) grid with C channels and window M:
//   omega_isa = 4hwC^2 + 2hw^2C
//   omega_wsa = 4hwC^2 + 2M^2hwC
struct ComplexityReport {
    std::uint64_t omega_isa = 0;
    std::uint64_t omega_wsa = 0;
    std::int64_t h = 0, w = 0, C = 0, M = 0;
    double isa_over_wsa = 0.0;
};

ComplexityReport flops_eq23(std::int64_t h, std::int64_t w, std::int64_t C, std::int64_t M);

// ---------------------------------------------------------------------------
// PCA by covariance eigendecomposition (power iteration with deflation,
// deterministic start vectors, fixed iteration budget).
struct PcaResult {
    TensorF components;                  // (k, C), orthonormal rows
    std::vector<double> explained_ratio; // eigenvalue / total variance, descending
    TensorF projected;                   // (n, k)
};

PcaResult pca_project(const TensorF& features, int k); // features (n, C), n > 1

// ---------------------------------------------------------------------------
// Epipolar geometry residual p_l^T K^-T t^ R K^-1 p_r.
struct CameraGeometry {
    TensorF K; // 3x3 intrinsics
    TensorF R; // 3x3 rotation, orthonormal within 1e-9
    std::array<double, 3> t{};

    static CameraGeometry make(TensorF K, TensorF R, std::array<double, 3> t);
    TensorF t_cross() const; // antisymmetric matrix of t
};

double epipolar_residual(const std::array<double, 3>& p_l, const std::array<double, 3>& p_r,
                         const CameraGeometry& geom);

} // namespace aau
